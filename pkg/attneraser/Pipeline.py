# -*- coding: utf-8 -*-
"""
Pipeline: end to end object removal.

SIP (stochastic inpainting pipeline):
    1. z_0 = encode(image)
    2. z = add_noise(z_0, t_{T_I}, eps) with eps ~ N(0, I)
    3. for k = T_I, ..., 1:
           eps_hat = guided prediction at (z, t_k)
           z = ddim_step(z, eps_hat, t_k, t_{k-1})
           x = add_noise(z_0, t_{k-1}, fresh eps)
           z = z inside the mask, x outside
    4. result = decode(z)

DIP (deterministic inpainting pipeline) starts from the last latent of the
DDIM inversion of z_0, and takes the re-noised original of each step from the
stored inversion trajectory (z_0 itself at the last step). It uses no random
numbers.

Since alpha_bar(0) = 1, the last blend puts the encoded original back outside
the mask, so with the identity codec the background is returned unchanged.

@author: attneraser developers
"""
import logging
import time

import torch

from attneraser.Archive import TensorArchive
from attneraser.Attention import AttentionRecord
from attneraser.Denoiser import predict
from attneraser.Guidance import guided_predict
from attneraser.errors import ArchiveError, ConfigError, DimensionError
from attneraser.numerics import gaussian, make_rng

logger = logging.getLogger(__name__)


def blend_latents(z, x_noised, mask_latent):
    """
    Generated content z where mask_latent is 1, x_noised where it is 0.
    mask_latent must be binary and broadcast to the shape of z.
    """
    if z.shape != x_noised.shape:
        raise DimensionError('Error in blend_latents: latent shapes ' + str(tuple(z.shape)) +
                             ' and ' + str(tuple(x_noised.shape)) + ' differ')
    if not bool(((mask_latent == 0) | (mask_latent == 1)).all()):
        raise ValueError('Error in blend_latents: mask must be binary')
    try:
        keep = (mask_latent > 0.5).expand_as(z)
    except RuntimeError:
        raise DimensionError('Error in blend_latents: mask shape ' + str(tuple(mask_latent.shape)) +
                             ' does not match the latent shape ' + str(tuple(z.shape)))
    return torch.where(keep, z, x_noised)


class RemovalTrace:
    """
    What a removal run leaves behind besides the result:
        - records: AttentionRecord objects of every guided prediction
        - latents: list of (step index, latent after blending)
        - metadata: run summary (config, timings)
    """

    def __init__(self):
        self.records = []
        self.latents = []
        self.metadata = {}

    def to_archive(self):
        archive = TensorArchive(metadata={'kind': 'trace'})
        for key, value in self.metadata.items():
            archive.set_meta(key, value)
        for i, rec in enumerate(self.records):
            rec.to_archive(archive, 'record/' + str(i))
        archive.set_meta('records', str(len(self.records)))
        for step, latent in self.latents:
            archive.add('latent/' + str(step), latent)
        return archive

    def save_file(self, filename):
        return self.to_archive().save_file(filename)

    @classmethod
    def open_file(cls, filepath):
        archive = TensorArchive.open_file(filepath)
        if archive.metadata.get('kind') != 'trace':
            raise ArchiveError('Error in RemovalTrace: archive is not a removal trace')
        trace = cls()
        trace.metadata = {key: value for key, value in archive.metadata.items()
                          if key not in ['kind', 'records'] and not key.startswith('record/')}
        for i in range(int(archive.metadata.get('records', '0'))):
            trace.records.append(AttentionRecord.from_archive(archive, 'record/' + str(i)))
        latents = [(int(name[len('latent/'):]), archive[name]) for name in archive.tensors
                   if name.startswith('latent/')]
        trace.latents = sorted(latents, key=lambda item: -item[0])
        return trace


def _prepare(checkpoint, image, mask, config, pipeline):
    if config.pipeline != pipeline:
        raise ConfigError('Error in ' + pipeline + '_remove: config is for pipeline ' + config.pipeline)
    if config.codec != checkpoint.codec.kind:
        raise ConfigError('Error in ' + pipeline + '_remove: config codec ' + config.codec +
                          ' differs from the checkpoint codec ' + checkpoint.codec.kind)
    model_config = checkpoint.config
    if image.dim() != 3 or image.shape[0] != model_config.channels:
        raise DimensionError('Error in ' + pipeline + '_remove: image must be (' +
                             str(model_config.channels) + ', H, W), got ' + str(tuple(image.shape)))
    if tuple(mask.base.shape) != tuple(image.shape[1:]):
        raise DimensionError('Error in ' + pipeline + '_remove: mask shape ' + str(tuple(mask.base.shape)) +
                             ' differs from image shape ' + str(tuple(image.shape[1:])))

    z0 = checkpoint.codec.encode(image[None].to(torch.float32))
    if z0.shape[2] != model_config.image_size or z0.shape[3] != model_config.image_size:
        raise DimensionError('Error in ' + pipeline + '_remove: latent resolution ' +
                             str(tuple(z0.shape[2:])) + ' does not match the checkpoint resolution ' +
                             str(model_config.image_size))
    if not mask.is_empty():
        for n in model_config.attention_resolutions:
            mask.flat(n)
    schedule = checkpoint.schedule.with_inference_steps(config.steps)
    return z0, mask.latent(z0.shape[2], z0.shape[3]), schedule


def _loop(checkpoint, z, mask, mask_latent, config, schedule, renoised, trace):
    model = checkpoint.model
    for k, t, t_prev in schedule.step_pairs():
        eps_hat, records = guided_predict(model, z, t, mask, config, k, record=trace is not None)
        z = schedule.ddim_step(z, eps_hat, t, t_prev)
        z = blend_latents(z, renoised(k - 1, t_prev), mask_latent)
        if trace is not None:
            trace.records.extend(records)
            trace.latents.append((k - 1, z[0].clone()))
    return z


def sip_remove(checkpoint, image, mask, config, trace=False, stream=0):
    """
    Stochastic inpainting with removal guidance.

    Parameters
    ----------
    checkpoint : Checkpoint
    image : Tensor (C, H, W) in [-1, 1]
    mask : RemovalMask with base (H, W)
    config : RemovalConfig with pipeline 'sip'
    trace : bool, keep attention records and intermediate latents
    stream : int, noise stream index; runs with equal (seed, stream) are identical

    Returns
    -------
    (result Tensor (C, H, W), RemovalTrace or None)

    """
    start = time.perf_counter()
    z0, mask_latent, schedule = _prepare(checkpoint, image, mask, config, 'sip')
    rng = make_rng(config.seed, stream)
    run_trace = RemovalTrace() if trace else None

    z = schedule.add_noise(z0, schedule.timestep(config.steps), gaussian(rng, z0.shape, z0.dtype))

    def renoised(k, t_prev):
        return schedule.add_noise(z0, t_prev, gaussian(rng, z0.shape, z0.dtype))

    z = _loop(checkpoint, z, mask, mask_latent, config, schedule, renoised, run_trace)
    result = checkpoint.codec.decode(z)[0]
    elapsed = time.perf_counter() - start
    logger.info('sip removal %s done in %.2f s', config.label(), elapsed)
    if run_trace is not None:
        run_trace.metadata.update({'config.' + key: value for key, value in config.as_dict().items()})
        run_trace.metadata['seconds'] = '{:.3f}'.format(elapsed)
    return result, run_trace


def dip_remove(checkpoint, image, mask, config, trace=False, stream=0):
    """
    Deterministic inpainting with removal guidance (arguments as in sip_remove;
    stream is accepted for a common signature and not used).
    """
    start = time.perf_counter()
    z0, mask_latent, schedule = _prepare(checkpoint, image, mask, config, 'dip')
    run_trace = RemovalTrace() if trace else None
    model = checkpoint.model

    trajectory = schedule.ddim_invert(z0, lambda x, t: predict(model, x, t)[0])
    z = trajectory[-1]

    def renoised(k, t_prev):
        return z0 if k == 0 else trajectory[k - 1]

    z = _loop(checkpoint, z, mask, mask_latent, config, schedule, renoised, run_trace)
    result = checkpoint.codec.decode(z)[0]
    elapsed = time.perf_counter() - start
    logger.info('dip removal %s done in %.2f s', config.label(), elapsed)
    if run_trace is not None:
        run_trace.metadata.update({'config.' + key: value for key, value in config.as_dict().items()})
        run_trace.metadata['seconds'] = '{:.3f}'.format(elapsed)
    return result, run_trace


def remove(checkpoint, image, mask, config, trace=False, stream=0):
    """Run the pipeline named by config.pipeline"""
    if config.pipeline == 'sip':
        return sip_remove(checkpoint, image, mask, config, trace, stream)
    return dip_remove(checkpoint, image, mask, config, trace, stream)


def invert_roundtrip(checkpoint, image, steps):
    """
    DDIM inversion followed by plain DDIM sampling (no mask, no guidance).

    Returns
    -------
    (reconstruction Tensor (C, H, W), max abs error against image)

    """
    model = checkpoint.model
    schedule = checkpoint.schedule.with_inference_steps(steps)
    z0 = checkpoint.codec.encode(image[None].to(torch.float32))
    if z0.shape[2] != checkpoint.config.image_size:
        raise DimensionError('Error in invert_roundtrip: latent resolution does not match the checkpoint')
    z = schedule.ddim_invert(z0, lambda x, t: predict(model, x, t)[0])[-1]
    for k, t, t_prev in schedule.step_pairs():
        z = schedule.ddim_step(z, predict(model, z, t)[0], t, t_prev)
    result = checkpoint.codec.decode(z)[0]
    error = float((result.to(torch.float64) - image.to(torch.float64)).abs().max())
    logger.info('inversion round trip over %d steps: max abs error %.3e', steps, error)
    return result, error
