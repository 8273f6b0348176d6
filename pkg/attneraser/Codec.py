# -*- coding: utf-8 -*-
"""
Codec: the encode/decode boundary between images and the space the denoiser
works in.

    - IdentityCodec: pixel space diffusion, decode(encode(x)) == x exactly
    - AutoencoderCodec: a small convolutional autoencoder that halves the
      resolution, fit by reconstruction error

@author: attneraser developers
"""
import logging

import torch
from torch import nn
import torch.nn.functional as F
from tqdm import tqdm

from attneraser.errors import ArchiveError, ConfigError
from attneraser.numerics import gaussian

logger = logging.getLogger(__name__)


class Codec:
    """Base class. Derived classes define encode, decode and latent_size"""

    kind = None

    def encode(self, x):
        raise NotImplementedError()

    def decode(self, z):
        raise NotImplementedError()

    def latent_size(self, image_size):
        raise NotImplementedError()

    def to_archive(self, archive):
        archive.set_meta('codec.kind', self.kind)


class IdentityCodec(Codec):
    """Pixel space: the latent is the image"""

    kind = 'identity'

    def encode(self, x):
        return x.clone()

    def decode(self, z):
        return z.clone()

    def latent_size(self, image_size):
        return image_size


class _Autoencoder(nn.Module):

    def __init__(self, channels, hidden):
        super().__init__()
        self.encoder = nn.Sequential(nn.Conv2d(channels, hidden, 3, padding=1), nn.SiLU(),
                                     nn.Conv2d(hidden, hidden, 3, stride=2, padding=1), nn.SiLU(),
                                     nn.Conv2d(hidden, channels, 1))
        self.decoder = nn.Sequential(nn.Conv2d(channels, hidden, 3, padding=1), nn.SiLU(),
                                     nn.Upsample(scale_factor=2, mode='nearest'),
                                     nn.Conv2d(hidden, hidden, 3, padding=1), nn.SiLU(),
                                     nn.Conv2d(hidden, channels, 1))


class AutoencoderCodec(Codec):
    """
    Learned codec with a 2x spatial reduction:
        - channels: image channels (the latent keeps the same count)
        - hidden: width of the hidden convolutions
        - seed: weight initialization seed
    """

    kind = 'autoencoder'

    def __init__(self, channels=3, hidden=32, seed=0):
        if channels < 1 or hidden < 1:
            raise ConfigError('Error in constructing AutoencoderCodec: widths must be positive')
        self.channels = channels
        self.hidden = hidden
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.network = _Autoencoder(channels, hidden)

    def encode(self, x):
        with torch.no_grad():
            return self.network.encoder(x)

    def decode(self, z):
        with torch.no_grad():
            return self.network.decoder(z)

    def latent_size(self, image_size):
        return (image_size + 1) // 2

    def fit(self, images, rng, steps=500, lr=1.e-3, batch_size=16, progress=False):
        """
        Fit by mean squared reconstruction error on images (n, C, H, W).
        Batches are drawn from rng; a small Gaussian jitter on the latent
        keeps the decoder smooth. Returns the list of losses.
        """
        optimizer = torch.optim.RMSprop(self.network.parameters(), lr=lr, alpha=0.99, eps=1.e-8, momentum=0.)
        losses = []
        for _ in tqdm(range(steps), disable=not progress, desc='codec'):
            index = torch.from_numpy(rng.integers(0, images.shape[0], size=batch_size))
            batch = images[index]
            latent = self.network.encoder(batch)
            latent = latent + 0.01 * gaussian(rng, latent.shape, latent.dtype)
            loss = F.mse_loss(self.network.decoder(latent), batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss))
        if len(losses) > 0:
            logger.info('codec fit: %d steps, final reconstruction loss %.5f', steps, losses[-1])
        return losses

    def to_archive(self, archive):
        super().to_archive(archive)
        archive.set_meta('codec.channels', str(self.channels))
        archive.set_meta('codec.hidden', str(self.hidden))
        for name, value in self.network.state_dict().items():
            archive.add('codec/' + name, value)


def codec_from_archive(archive):
    """Rebuild the codec stored in a checkpoint archive (identity if none)"""
    kind = archive.metadata.get('codec.kind', IdentityCodec.kind)
    if kind == IdentityCodec.kind:
        return IdentityCodec()
    if kind == AutoencoderCodec.kind:
        codec = AutoencoderCodec(int(archive.metadata['codec.channels']), int(archive.metadata['codec.hidden']))
        state = {name[len('codec/'):]: archive[name] for name in archive.tensors if name.startswith('codec/')}
        try:
            codec.network.load_state_dict(state)
        except RuntimeError as error:
            raise ArchiveError('Error in codec_from_archive: ' + str(error))
        return codec
    raise ArchiveError('Error in codec_from_archive: unknown codec kind "' + kind + '"')


def make_codec(kind, channels=3, seed=0):
    if kind == IdentityCodec.kind:
        return IdentityCodec()
    if kind == AutoencoderCodec.kind:
        return AutoencoderCodec(channels, seed=seed)
    raise ConfigError('Codec kind "' + str(kind) + '" invalid: not in: identity/autoencoder')
