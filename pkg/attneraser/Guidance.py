# -*- coding: utf-8 -*-
"""
Guidance: self-attention redirection guidance.

Every inference step makes two noise predictions at z_t: the plain one,
eps_theta(z_t), and one with the decoder attention rewritten, AAS(eps_theta)(z_t).
They are combined by extrapolation

    eps_hat = eps_theta + s (AAS(eps_theta) - eps_theta)

The rewritten branch uses similarity suppression, AAS_SS(lambda), for the
early step indices T_SS <= k <= T_I and plain AAS afterwards.

The update can be read as gradient ascent on a discriminator that tells
samples of the object-free distribution p(z | y_AAS) from samples of the
model distribution p(z | y). Writing that discriminator as the log ratio of
the two densities, its gradient is the difference of the two scores. The
plain and rewritten noise predictions are approximations of those scores up
to the factor -sigma_t, so following the discriminator with step s is
exactly the extrapolation above. Nothing beyond sarg_epsilon is computed.

@author: attneraser developers
"""
import logging

import torch

from attneraser.Attention import AttentionMode, STANDARD
from attneraser.Denoiser import predict
from attneraser.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)


def sarg_epsilon(eps_plain, eps_aas, s):
    """
    eps_plain + s (eps_aas - eps_plain), written as (1 - s) eps_plain + s eps_aas
    so that s = 0 and s = 1 return their operand exactly.
    """
    if eps_plain.shape != eps_aas.shape:
        raise DimensionError('Error in sarg_epsilon: prediction shapes ' + str(tuple(eps_plain.shape)) +
                             ' and ' + str(tuple(eps_aas.shape)) + ' differ')
    s = float(s)
    if s < 0.:
        raise ConfigError('Error in sarg_epsilon: guidance scale must be non-negative, got ' + str(s))
    if s == 0.:
        return eps_plain.clone()
    if s == 1.:
        return eps_aas.clone()
    combined = (1. - s) * eps_plain.to(torch.float64) + s * eps_aas.to(torch.float64)
    return combined.to(eps_plain.dtype)


def perturbation_mode(config, step):
    """Attention mode of the rewritten branch at inference step index step"""
    if config.in_ss_window(step):
        return AttentionMode.aas_ss(config.suppression)
    return AttentionMode.aas()


def guided_predict(model, z_t, t, mask, config, step, record=False):
    """
    Guided noise prediction at train timestep t, inference step index step.

    Parameters
    ----------
    model : Denoiser
    z_t : Tensor (B, C, H, W)
    t : int, train timestep
    mask : RemovalMask
    config : RemovalConfig
    step : int, inference step index k (T_I .. 1)
    record : bool, keep the AttentionRecord objects: every layer of the plain branch
             and the rewritten layers of the perturbed branch

    Returns
    -------
    (eps_hat, records)

    """
    empty = mask is None or mask.is_empty()
    if config.guidance == 'sarg' and (config.scale == 0. or empty):
        return predict(model, z_t, t, STANDARD, None, record)

    mode = perturbation_mode(config, step)
    if empty:
        # aas-only with nothing to remove
        return predict(model, z_t, t, STANDARD, None, record)
    eps_aas, records_aas = predict(model, z_t, t, mode, mask, record)
    if config.guidance == 'aas-only':
        return eps_aas, records_aas

    eps_plain, records_plain = predict(model, z_t, t, STANDARD, None, record)
    logger.debug('step %d (t=%d): perturbed branch %s', step, t, mode)
    # layers outside aas_placements ran standard attention in both branches; keep them once
    rewritten = [rec for rec in records_aas if rec.mode != 'standard']
    return sarg_epsilon(eps_plain, eps_aas, config.scale), records_plain + rewritten
