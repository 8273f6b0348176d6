# -*- coding: utf-8 -*-
"""
Denoiser: a small U-shaped noise predictor eps_theta(z_t, t).

The network has an encoder of residual blocks with stride-2 downsampling, a
bottleneck, and a decoder with skip connections and nearest-neighbour
upsampling. Self-attention blocks sit at the configured token resolutions,
in the encoder, the bottleneck and the decoder. The timestep enters through
a sinusoidal embedding and an MLP.

The attention mode passed to forward (standard, aas or ss) is applied only to
the attention layers whose placement is listed in config.aas_placements
(decoder by default). All other attention layers always run standard
attention. With a non-standard mode the network is the AAS(eps_theta) of the
removal guidance.

@author: attneraser developers
"""
import math
from dataclasses import dataclass, fields

import torch
from torch import nn
import torch.nn.functional as F

from attneraser.Attention import SelfAttention, STANDARD, norm_groups
from attneraser.errors import ConfigError, DimensionError


def _as_tuple(text, cast):
    return tuple(cast(item) for item in text.split(',') if item != '')


@dataclass
class DenoiserConfig:
    """
    Layout of the denoiser:
        - image_size: side of the (square) input in pixels or latent cells
        - channels: input/output channels
        - base_width: width of the first level; level i has base_width * channel_mults[i]
        - channel_mults: one entry per level; len - 1 downsampling stages
        - attention_resolutions: token grid sizes that get attention blocks
        - attention_placements: parts of the U-Net that hold attention blocks
        - aas_placements: parts whose attention follows the requested mode
        - n_heads: attention heads
        - seed: seed of the weight initialization
    """
    image_size: int = 64
    channels: int = 3
    base_width: int = 32
    channel_mults: tuple = (1, 2, 2, 2)
    attention_resolutions: tuple = (16, 8)
    attention_placements: tuple = ('encoder', 'bottleneck', 'decoder')
    aas_placements: tuple = ('decoder',)
    n_heads: int = 1
    seed: int = 0

    def resolutions(self):
        """Feature map side at each level"""
        return [self.image_size // 2 ** i for i in range(len(self.channel_mults))]

    def widths(self):
        return [self.base_width * mult for mult in self.channel_mults]

    def validate(self):
        if self.image_size < 1 or self.channels < 1 or self.base_width < 1 or self.n_heads < 1:
            raise ConfigError('Error in DenoiserConfig: sizes must be positive')
        if len(self.channel_mults) < 1:
            raise ConfigError('Error in DenoiserConfig: at least one level is required')
        if self.image_size % 2 ** (len(self.channel_mults) - 1) != 0:
            raise ConfigError('Error in DenoiserConfig: image_size ' + str(self.image_size) +
                              ' cannot be halved ' + str(len(self.channel_mults) - 1) + ' times')
        for width in self.widths():
            if width % self.n_heads != 0:
                raise ConfigError('Error in DenoiserConfig: n_heads must divide every level width')
        for resolution in self.attention_resolutions:
            if resolution not in self.resolutions():
                raise ConfigError('Error in DenoiserConfig: attention resolution ' + str(resolution) +
                                  ' is not one of the level resolutions ' + str(self.resolutions()))
        for placement in list(self.attention_placements) + list(self.aas_placements):
            if placement not in SelfAttention.PLACEMENTS:
                raise ConfigError('Error in DenoiserConfig: placement "' + str(placement) +
                                  '" invalid: not in: ' + '/'.join(SelfAttention.PLACEMENTS))
        if 'decoder' not in self.attention_placements or len(self.attention_resolutions) == 0:
            raise ConfigError('Error in DenoiserConfig: at least one decoder attention layer is required')
        if len(self.aas_placements) == 0:
            raise ConfigError('Error in DenoiserConfig: aas_placements cannot be empty')
        bottleneck = self.resolutions()[-1]
        for placement in self.aas_placements:
            if placement not in self.attention_placements or \
                    (placement == 'bottleneck' and bottleneck not in self.attention_resolutions):
                raise ConfigError('Error in DenoiserConfig: aas placement "' + placement +
                                  '" has no attention layer')

    def to_metadata(self):
        metadata = {}
        for field in fields(self):
            value = getattr(self, field.name)
            if isinstance(value, tuple):
                value = ','.join(str(item) for item in value)
            metadata['denoiser.' + field.name] = str(value)
        return metadata

    @classmethod
    def from_metadata(cls, metadata):
        values = {}
        for field in fields(cls):
            key = 'denoiser.' + field.name
            if key not in metadata:
                raise ConfigError('Error in DenoiserConfig.from_metadata: missing ' + key)
            text = metadata[key]
            if field.name in ['channel_mults', 'attention_resolutions']:
                values[field.name] = _as_tuple(text, int)
            elif field.name in ['attention_placements', 'aas_placements']:
                values[field.name] = _as_tuple(text, str)
            else:
                values[field.name] = int(text)
        config = cls(**values)
        config.validate()
        return config


def timestep_embedding(t, dim):
    """Sinusoidal embedding (B, dim) of the timesteps t (B,)"""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    embedding = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2 == 1:
        embedding = F.pad(embedding, (0, 1))
    return embedding


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with GroupNorm/SiLU, timestep shift and a residual path"""

    def __init__(self, in_channels, out_channels, embed_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(norm_groups(in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.embed = nn.Linear(embed_dim, out_channels)
        self.norm2 = nn.GroupNorm(norm_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x, embedding):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.embed(F.silu(embedding))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Level(nn.Module):
    """One resolution of the encoder or decoder: residual block, optional attention, resampling"""

    def __init__(self, block, attention, resample):
        super().__init__()
        self.block = block
        self.attention = attention
        self.resample = resample


class Upsample(nn.Module):

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode='nearest'))


class Denoiser(nn.Module):
    """
    U-Net noise predictor built from a DenoiserConfig. Weights are initialized
    from config.seed without touching the global torch random state.
    """

    def __init__(self, config=None):
        super().__init__()
        config = DenoiserConfig() if config is None else config
        config.validate()
        self.config = config

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self._build()

    def _build(self):
        config = self.config
        base = config.base_width
        embed_dim = 4 * base
        widths = config.widths()
        resolutions = config.resolutions()
        n_levels = len(widths)

        self.time_mlp = nn.Sequential(nn.Linear(base, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim))
        self.stem = nn.Conv2d(config.channels, widths[0], 3, padding=1)

        self.encoder = nn.ModuleList()
        previous = widths[0]
        for i in range(n_levels):
            attention = self._attention(widths[i], resolutions[i], 'encoder')
            resample = nn.Conv2d(widths[i], widths[i], 3, stride=2, padding=1) if i < n_levels - 1 else None
            self.encoder.append(Level(ResidualBlock(previous, widths[i], embed_dim), attention, resample))
            previous = widths[i]

        self.mid_block1 = ResidualBlock(previous, previous, embed_dim)
        self.mid_attention = self._attention(previous, resolutions[-1], 'bottleneck')
        self.mid_block2 = ResidualBlock(previous, previous, embed_dim)

        self.decoder = nn.ModuleList()
        for i in reversed(range(n_levels)):
            attention = self._attention(widths[i], resolutions[i], 'decoder')
            resample = Upsample(widths[i]) if i > 0 else None
            self.decoder.append(Level(ResidualBlock(previous + widths[i], widths[i], embed_dim),
                                      attention, resample))
            previous = widths[i]

        self.out_norm = nn.GroupNorm(norm_groups(previous), previous)
        self.out_conv = nn.Conv2d(previous, config.channels, 3, padding=1)

    def _attention(self, width, resolution, placement):
        config = self.config
        if resolution not in config.attention_resolutions or placement not in config.attention_placements:
            return None
        return SelfAttention(width, config.n_heads, placement + '.' + str(resolution), placement)

    def attention_layers(self):
        return [module for module in self.modules() if isinstance(module, SelfAttention)]

    def n_parameters(self):
        return sum(p.numel() for p in self.parameters())

    def _run_attention(self, layer, h, mode, mask, timestep, records):
        if layer is None:
            return h
        if layer.placement not in self.config.aas_placements:
            mode = STANDARD
        return layer(h, mode, mask if not mode.is_standard() else None, timestep, records)

    def forward(self, x, t, mode=STANDARD, mask=None, records=None):
        """
        Parameters
        ----------
        x : Tensor (B, C, H, W), noisy input
        t : int or int64 Tensor (B,), train timesteps
        mode : AttentionMode for the aas placements
        mask : RemovalMask, needed unless mode is standard
        records : list or None, receives AttentionRecord objects

        Returns
        -------
        Tensor (B, C, H, W), predicted noise

        """
        config = self.config
        if x.dim() != 4 or x.shape[1] != config.channels or \
                x.shape[2] != config.image_size or x.shape[3] != config.image_size:
            raise DimensionError('Error in Denoiser: input shape ' + str(tuple(x.shape)) +
                                 ' does not match (B, ' + str(config.channels) + ', ' +
                                 str(config.image_size) + ', ' + str(config.image_size) + ')')
        if not isinstance(t, torch.Tensor) or t.dim() == 0:
            t = torch.full((x.shape[0],), int(t), dtype=torch.int64)
        timestep = int(t[0])
        embedding = self.time_mlp(timestep_embedding(t, config.base_width).to(x.dtype))

        h = self.stem(x)
        skips = []
        for level in self.encoder:
            h = level.block(h, embedding)
            h = self._run_attention(level.attention, h, mode, mask, timestep, records)
            skips.append(h)
            if level.resample is not None:
                h = level.resample(h)

        h = self.mid_block1(h, embedding)
        h = self._run_attention(self.mid_attention, h, mode, mask, timestep, records)
        h = self.mid_block2(h, embedding)

        for level in self.decoder:
            h = level.block(torch.cat([h, skips.pop()], dim=1), embedding)
            h = self._run_attention(level.attention, h, mode, mask, timestep, records)
            if level.resample is not None:
                h = level.resample(h)

        return self.out_conv(F.silu(self.out_norm(h)))


def predict(model, z_t, t, mode=STANDARD, mask=None, record=False):
    """
    Noise prediction without gradients.

    A mask must be given exactly when mode is not standard.

    Returns
    -------
    (eps, list of AttentionRecord; empty unless record is True)

    """
    if mode.is_standard() and mask is not None:
        raise ValueError('Error in predict: a mask is only accepted with a non-standard mode')
    if not mode.is_standard() and mask is None:
        raise ValueError('Error in predict: mode ' + str(mode) + ' needs a RemovalMask')
    records = [] if record else None
    with torch.no_grad():
        eps = model(z_t, t, mode, mask, records)
    return eps, (records if record else [])
