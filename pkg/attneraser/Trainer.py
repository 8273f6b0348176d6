# -*- coding: utf-8 -*-
"""
Trainer: fit the denoiser to a set of clean images by minimizing

    E || eps - eps_theta(sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t) ||^2

with t uniform on 1..T and eps standard normal. Batches, timesteps and noise
are all drawn from one Philox stream, so a run is fully determined by the
seeds of the stream and of the weight initialization.

The optimizer is RMSprop without momentum (alpha = 0.99, eps = 1e-8).

If the loss or the updated weights stop being finite, the weights of the last
good step are put back in the model and a TrainingError carrying them is raised.

@author: attneraser developers
"""
import logging
import math

import torch
import torch.nn.functional as F
from tqdm import tqdm

from attneraser.Denoiser import Denoiser
from attneraser.errors import ConfigError, TrainingError
from attneraser.numerics import gaussian

logger = logging.getLogger(__name__)

RMSPROP_ALPHA = 0.99
RMSPROP_EPS = 1.e-8


def diffusion_loss(model, schedule, x0, t, eps):
    """Mean squared error between eps and the prediction at x_t = add_noise(x0, t, eps)"""
    x_t = schedule.add_noise(x0, t, eps)
    return F.mse_loss(model(x_t, t), eps)


class Trainer:
    """
    Optimizer state and loss history for one model:
        - model: Denoiser
        - schedule: NoiseSchedule
        - rng: numpy Generator for batches, timesteps and noise
        - lr: learning rate
        - batch_size: images per step (drawn with replacement if the dataset is smaller)
        - log_every: steps between running-loss log lines
    """

    def __init__(self, model, schedule, rng, lr=2.e-4, batch_size=32, log_every=50, progress=False):
        if lr < 0.:
            raise ConfigError('Error in constructing Trainer: learning rate must be non-negative')
        if batch_size < 1:
            raise ConfigError('Error in constructing Trainer: batch_size must be positive')
        self.model = model
        self.schedule = schedule
        self.rng = rng
        self.lr = lr
        self.batch_size = batch_size
        self.log_every = log_every
        self.progress = progress
        self.optimizer = torch.optim.RMSprop(model.parameters(), lr=lr, alpha=RMSPROP_ALPHA,
                                             eps=RMSPROP_EPS, momentum=0.)
        self.losses = []
        self.running_loss = None

    def _batches(self, n_images):
        if n_images >= self.batch_size:
            order = self.rng.permutation(n_images)
            return [order[start:start + self.batch_size] for start in range(0, n_images, self.batch_size)]
        return [self.rng.integers(0, n_images, size=self.batch_size)]

    def step(self, x0):
        """One optimizer step on the clean batch x0; returns the loss"""
        t = torch.from_numpy(self.rng.integers(1, self.schedule.n_train_steps + 1, size=x0.shape[0]))
        eps = gaussian(self.rng, x0.shape, x0.dtype)
        last_good = {key: value.detach().clone() for key, value in self.model.state_dict().items()}

        self.model.train()
        loss = diffusion_loss(self.model, self.schedule, x0, t, eps)
        value = float(loss)
        if not math.isfinite(value):
            self.model.load_state_dict(last_good)
            raise TrainingError('Error in Trainer: loss is not finite at step ' + str(len(self.losses) + 1),
                                last_good_state=last_good, step=len(self.losses) + 1)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        if not all(bool(torch.isfinite(p).all()) for p in self.model.parameters()):
            self.model.load_state_dict(last_good)
            raise TrainingError('Error in Trainer: weights are not finite after step ' + str(len(self.losses) + 1),
                                last_good_state=last_good, step=len(self.losses) + 1)

        self.losses.append(value)
        if self.running_loss is None:
            self.running_loss = value
        else:
            self.running_loss = 0.98 * self.running_loss + 0.02 * value
        if self.log_every > 0 and len(self.losses) % self.log_every == 0:
            logger.info('step %d: loss %.5f (running %.5f)', len(self.losses), value, self.running_loss)
        return value

    def train(self, dataset, epochs):
        """
        Parameters
        ----------
        dataset : Tensor (n, C, H, W), clean images in [-1, 1]
        epochs : int, passes over the dataset

        Returns
        -------
        list of per-step losses of this call

        """
        if dataset.dim() != 4 or dataset.shape[0] < 1:
            raise ValueError('Error in Trainer.train: dataset must be a non-empty (n, C, H, W) tensor')
        if epochs < 0:
            raise ConfigError('Error in Trainer.train: epochs must be non-negative')
        first = len(self.losses)
        n_images = dataset.shape[0]
        n_steps = epochs * math.ceil(n_images / self.batch_size) if n_images >= self.batch_size else epochs
        # the permutation of an epoch is drawn before its steps' timesteps and noise
        with tqdm(total=n_steps, disable=not self.progress, desc='train') as bar:
            for _ in range(epochs):
                for index in self._batches(dataset.shape[0]):
                    self.step(dataset[torch.from_numpy(index)])
                    bar.update(1)
                    bar.set_postfix(loss='{:.4f}'.format(self.running_loss))
        self.model.eval()
        return self.losses[first:]


def train(config, dataset, schedule, rng, epochs, lr, batch_size=32, progress=False):
    """Build a Denoiser from config and train it; returns the trained model"""
    model = Denoiser(config)
    Trainer(model, schedule, rng, lr=lr, batch_size=batch_size, progress=progress).train(dataset, epochs)
    return model
