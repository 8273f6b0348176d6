# -*- coding: utf-8 -*-
"""
NoiseSchedule: variance schedule of the forward (noising) process together
with the deterministic DDIM reverse step and DDIM inversion.

Train timesteps run over 1..T. beta[t-1] holds beta_t, and alpha_bar at
t = 0 is defined to be exactly 1, so that the last reverse step lands on the
clean signal.

The inference schedule has T_I steps, indexed by k = T_I, ..., 1, with
train timestep t_k = floor(k T / T_I). Step index 0 maps to t = 0.

@author: attneraser developers
"""
import logging

import torch

from attneraser.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)


class NoiseSchedule:
    """
    Linear beta schedule:
        - n_train_steps: T, number of train timesteps
        - beta_start, beta_end: end points of the linear beta ramp, 0 < start <= end < 1
        - n_inference_steps: T_I, number of DDIM steps used at inference, 1 <= T_I <= T
    """

    def __init__(self, n_train_steps=1000, beta_start=1.e-4, beta_end=0.02, n_inference_steps=50):
        if not isinstance(n_train_steps, int) or n_train_steps < 1:
            raise ConfigError('Error in constructing NoiseSchedule: T must be a positive integer')
        if not 0. < beta_start <= beta_end < 1.:
            raise ConfigError('Error in constructing NoiseSchedule: need 0 < beta_start <= beta_end < 1, ' +
                              'got ' + str(beta_start) + ', ' + str(beta_end))
        if not isinstance(n_inference_steps, int) or not 1 <= n_inference_steps <= n_train_steps:
            raise ConfigError('Error in constructing NoiseSchedule: need 1 <= T_I <= T, got T_I=' +
                              str(n_inference_steps) + ', T=' + str(n_train_steps))
        self.n_train_steps = n_train_steps
        self.beta_start = float(beta_start)
        self.beta_end = float(beta_end)
        self.n_inference_steps = n_inference_steps

        self.beta = torch.linspace(self.beta_start, self.beta_end, n_train_steps, dtype=torch.float64)
        self.alpha = 1. - self.beta
        self.alpha_bar = torch.cumprod(self.alpha, dim=0)
        self.inference_steps = [k * n_train_steps // n_inference_steps
                                for k in range(n_inference_steps, 0, -1)]

    def __str__(self):
        return ('linear(T=' + str(self.n_train_steps) + ', beta=' + str(self.beta_start) + '..' +
                str(self.beta_end) + ', T_I=' + str(self.n_inference_steps) + ')')

    def with_inference_steps(self, n_inference_steps):
        """Same variance schedule with a different number of inference steps"""
        return NoiseSchedule(self.n_train_steps, self.beta_start, self.beta_end, n_inference_steps)

    def timestep(self, k):
        """Train timestep of inference step index k (0 <= k <= T_I)"""
        if not 0 <= k <= self.n_inference_steps:
            raise ValueError('Error in NoiseSchedule.timestep: step index ' + str(k) +
                             ' outside 0..' + str(self.n_inference_steps))
        if k == 0:
            return 0
        return self.inference_steps[self.n_inference_steps - k]

    def step_pairs(self):
        """List of (k, t_k, t_{k-1}) for k = T_I, ..., 1"""
        return [(k, self.timestep(k), self.timestep(k - 1))
                for k in range(self.n_inference_steps, 0, -1)]

    def get_alpha_bar(self, t):
        """Cumulative alpha at train timestep t, with alpha_bar(0) = 1"""
        if isinstance(t, bool) or not 0 <= int(t) <= self.n_train_steps or int(t) != t:
            raise ValueError('Error in NoiseSchedule: timestep ' + str(t) + ' outside 0..' +
                             str(self.n_train_steps))
        t = int(t)
        if t == 0:
            return 1.
        return float(self.alpha_bar[t - 1])

    def add_noise(self, x0, t, eps):
        """
        Forward process sample: sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
        t may be an int or an int64 Tensor with one timestep per batch item.
        """
        if eps.shape != x0.shape:
            raise DimensionError('Error in add_noise: eps shape ' + str(tuple(eps.shape)) +
                                 ' differs from x0 shape ' + str(tuple(x0.shape)))
        a_bar = self._alpha_bar_like(t, x0)
        noised = torch.sqrt(a_bar) * x0.to(torch.float64) + torch.sqrt(1. - a_bar) * eps.to(torch.float64)
        return noised.to(x0.dtype)

    def _alpha_bar_like(self, t, x):
        if isinstance(t, torch.Tensor) and t.dim() > 0:
            if t.shape[0] != x.shape[0]:
                raise DimensionError('Error in add_noise: one timestep per batch item required')
            if bool((t < 0).any()) or bool((t > self.n_train_steps).any()):
                raise ValueError('Error in add_noise: timestep outside 0..' + str(self.n_train_steps))
            padded = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bar])
            return padded[t.long()].view(-1, *([1] * (x.dim() - 1)))
        return torch.tensor(self.get_alpha_bar(t), dtype=torch.float64)

    def ddim_step(self, z_t, eps_hat, t, t_prev):
        """
        Deterministic (eta = 0) DDIM update from timestep t to t_prev < t:
        sqrt(ab_prev) (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t) + sqrt(1 - ab_prev) eps_hat
        """
        if not t > t_prev >= 0:
            raise ValueError('Error in ddim_step: need t > t_prev >= 0, got t=' + str(t) +
                             ', t_prev=' + str(t_prev))
        if eps_hat.shape != z_t.shape:
            raise DimensionError('Error in ddim_step: eps_hat shape differs from z_t shape')
        return self._transfer(z_t, eps_hat, self.get_alpha_bar(t), self.get_alpha_bar(t_prev))

    @staticmethod
    def _transfer(z, eps, a_from, a_to):
        z64 = z.to(torch.float64)
        e64 = eps.to(torch.float64)
        x0_pred = (z64 - (1. - a_from) ** 0.5 * e64) / a_from ** 0.5
        return (a_to ** 0.5 * x0_pred + (1. - a_to) ** 0.5 * e64).to(z.dtype)

    def ddim_invert(self, x0, eps_fn):
        """
        DDIM inversion: run the DDIM recurrence from t_{k-1} to t_k for
        k = 1, ..., T_I, with eps_fn(x_{t_{k-1}}, t_k) as noise estimate.

        Parameters
        ----------
        x0 : Tensor, clean latent
        eps_fn : callable(x, t) -> Tensor, deterministic noise predictor

        Returns
        -------
        list of Tensor, trajectory[k - 1] is the latent at inference step k

        """
        trajectory = []
        x = x0
        for k in range(1, self.n_inference_steps + 1):
            t_prev = self.timestep(k - 1)
            t = self.timestep(k)
            eps = eps_fn(x, t)
            x = self._transfer(x, eps, self.get_alpha_bar(t_prev), self.get_alpha_bar(t))
            trajectory.append(x)
        logger.debug('DDIM inversion done over %d steps', self.n_inference_steps)
        return trajectory

    def to_metadata(self):
        return {'schedule.n_train_steps': str(self.n_train_steps),
                'schedule.beta_start': repr(self.beta_start),
                'schedule.beta_end': repr(self.beta_end),
                'schedule.n_inference_steps': str(self.n_inference_steps)}

    @classmethod
    def from_metadata(cls, metadata):
        try:
            return cls(int(metadata['schedule.n_train_steps']),
                       float(metadata['schedule.beta_start']),
                       float(metadata['schedule.beta_end']),
                       int(metadata['schedule.n_inference_steps']))
        except KeyError as error:
            raise ConfigError('Error in NoiseSchedule.from_metadata: missing ' + str(error))


def make_schedule(n_train_steps, beta_start, beta_end, n_inference_steps):
    """Linear beta schedule with evenly spaced inference timesteps"""
    return NoiseSchedule(n_train_steps, beta_start, beta_end, n_inference_steps)
