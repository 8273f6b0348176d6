# -*- coding: utf-8 -*-
"""
Attention: self-attention over the tokens of a feature map, with three ways
of forming the attention map:

    - standard: A = softmax(Q K^T / sqrt(d)), OP = A V
    - aas: the columns of the object tokens are removed from every row before
      the softmax. Rows renormalize over the background tokens (activation of
      object -> background attention), and no token attends to the object
      (suppression of object -> object and background -> object attention).
    - ss: two branches on the same similarities. Object rows use the similarities
      scaled by the suppression factor lambda, background rows use plain aas.
      The output takes object rows from the first branch and background rows
      from the second.

The object columns are removed with a boolean mask in
numerics.masked_row_softmax, so their weights are exactly zero.

Every call can produce AttentionRecord objects, which keep S, A and OP of the
first batch item (averaged over heads) for the analysis tools.

@author: attneraser developers
"""
import math
from dataclasses import dataclass

import torch
from torch import nn

from attneraser.errors import ConfigError, DimensionError
from attneraser.numerics import matmul, masked_row_softmax


class AttentionMode:
    """
    How decoder attention layers form their attention map:
        - kind: 'standard', 'aas' or 'ss'
        - suppression: lambda in [0, 1], used by 'ss' only
    """

    KINDS = ['standard', 'aas', 'ss']

    def __init__(self, kind='standard', suppression=1.):
        if kind not in self.KINDS:
            raise ConfigError('AttentionMode kind "' + str(kind) + '" invalid: not in: ' +
                              '/'.join(self.KINDS))
        suppression = float(suppression)
        if kind == 'ss' and not 0. <= suppression <= 1.:
            raise ConfigError('AttentionMode: suppression factor must be in [0, 1], got ' +
                              str(suppression))
        self.kind = kind
        self.suppression = suppression if kind == 'ss' else 1.

    @classmethod
    def standard(cls):
        return cls('standard')

    @classmethod
    def aas(cls):
        return cls('aas')

    @classmethod
    def aas_ss(cls, suppression):
        return cls('ss', suppression)

    def is_standard(self):
        return self.kind == 'standard'

    def __eq__(self, other):
        return (isinstance(other, AttentionMode) and self.kind == other.kind and
                self.suppression == other.suppression)

    def __hash__(self):
        return hash((self.kind, self.suppression))

    def __str__(self):
        if self.kind == 'ss':
            return 'ss(' + '{:g}'.format(self.suppression) + ')'
        return self.kind


STANDARD = AttentionMode.standard()


@dataclass
class AttentionRecord:
    """S, A and OP of one attention layer at one timestep"""
    layer_id: str
    timestep: int
    mode: str
    similarity: torch.Tensor
    attention: torch.Tensor
    output: torch.Tensor

    def resolution(self):
        return int(round(math.sqrt(self.attention.shape[-1])))

    def to_archive(self, archive, prefix):
        for name in ['similarity', 'attention', 'output']:
            archive.add(prefix + '/' + name, getattr(self, name))
        archive.set_meta(prefix + '.layer_id', self.layer_id)
        archive.set_meta(prefix + '.timestep', str(self.timestep))
        archive.set_meta(prefix + '.mode', self.mode)

    @classmethod
    def from_archive(cls, archive, prefix):
        timestep = archive.metadata[prefix + '.timestep']
        return cls(archive.metadata[prefix + '.layer_id'],
                   None if timestep == 'None' else int(timestep),
                   archive.metadata[prefix + '.mode'],
                   archive[prefix + '/similarity'], archive[prefix + '/attention'],
                   archive[prefix + '/output'])


def norm_groups(channels):
    for groups in [8, 4, 2]:
        if channels % groups == 0:
            return groups
    return 1


class SelfAttention(nn.Module):
    """
    Self-attention block on a (B, C, N, N) feature map with a residual
    connection. The learned maps l_Q, l_K, l_V and the output projection are
    the layer parameters.
        - channels: model width d
        - n_heads: number of heads, must divide channels
        - layer_id: name used in records and figures
        - placement: 'encoder', 'bottleneck' or 'decoder'
    """

    PLACEMENTS = ['encoder', 'bottleneck', 'decoder']

    def __init__(self, channels, n_heads=1, layer_id='attention', placement='decoder'):
        super().__init__()
        if channels < 1 or n_heads < 1 or channels % n_heads != 0:
            raise ConfigError('Error in constructing SelfAttention (' + layer_id +
                              '): heads must divide a positive width')
        if placement not in self.PLACEMENTS:
            raise ConfigError('Error in constructing SelfAttention (' + layer_id + '): placement "' +
                              str(placement) + '" invalid: not in: ' + '/'.join(self.PLACEMENTS))
        self.channels = channels
        self.n_heads = n_heads
        self.layer_id = layer_id
        self.placement = placement
        self.norm = nn.GroupNorm(norm_groups(channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, h, mode=STANDARD, mask=None, timestep=None, records=None):
        """
        Parameters
        ----------
        h : Tensor (B, C, N, N)
        mode : AttentionMode
        mask : RemovalMask, required unless mode is standard
        timestep : int, stored in records
        records : list or None. If a list, AttentionRecord objects are appended.

        """
        batch, channels, height, width = h.shape
        if height != width:
            raise DimensionError('Error in SelfAttention (' + self.layer_id + '): feature map must be square')
        tokens = self.norm(h).flatten(2).transpose(1, 2)
        record = records is not None

        if mode.kind == 'standard':
            out, rec = standard_attention(self, tokens, record=record)
            new_records = [rec]
        else:
            if mask is None:
                raise ValueError('Error in SelfAttention (' + self.layer_id + '): mode ' + str(mode) +
                                 ' needs a mask')
            mask_flat = mask.flat(height)
            if mode.kind == 'aas':
                out, rec = aas_attention(self, tokens, mask_flat, record=record)
                new_records = [rec]
            else:
                out, rec_obj, rec_bg = ss_attention(self, tokens, mask_flat, mode.suppression, record=record)
                new_records = [merge_ss_records(rec_obj, rec_bg, mask_flat)] if record else []

        if record:
            for rec in new_records:
                rec.timestep = timestep
                records.append(rec)
        return h + out.transpose(1, 2).reshape(batch, channels, height, width)


def _split_heads(x, n_heads):
    batch, n_tokens, width = x.shape
    return x.view(batch, n_tokens, n_heads, width // n_heads).transpose(1, 2)


def _merge_heads(x):
    batch, n_heads, n_tokens, head_width = x.shape
    return x.transpose(1, 2).reshape(batch, n_tokens, n_heads * head_width)


def _prepare(layer, z):
    unbatched = z.dim() == 2
    if unbatched:
        z = z[None]
    if z.dim() != 3 or z.shape[-1] != layer.channels:
        raise DimensionError('Error in attention (' + layer.layer_id + '): tokens of width ' +
                             str(z.shape[-1]) + ' given to a layer of width ' + str(layer.channels))
    q = _split_heads(layer.to_q(z), layer.n_heads)
    k = _split_heads(layer.to_k(z), layer.n_heads)
    v = _split_heads(layer.to_v(z), layer.n_heads)
    similarity = matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    return unbatched, similarity, v


def _column_mask(mask_flat, n_tokens):
    if mask_flat.numel() != n_tokens:
        raise DimensionError('Error in attention: mask has ' + str(mask_flat.numel()) +
                             ' entries for ' + str(n_tokens) + ' tokens')
    return mask_flat.reshape(n_tokens) > 0.5


def _finish(layer, unbatched, op_heads):
    out = layer.to_out(_merge_heads(op_heads))
    return out[0] if unbatched else out


def _record(layer, mode, similarity, attention, op_heads):
    return AttentionRecord(layer.layer_id, None, mode,
                           similarity[0].mean(dim=0).detach().clone(),
                           attention[0].mean(dim=0).detach().clone(),
                           _merge_heads(op_heads)[0].detach().clone())


def standard_attention(layer, z, record=True):
    """
    Standard self-attention on tokens z (N^2, c) or (B, N^2, c).

    Returns
    -------
    (OP after output projection, AttentionRecord or None)

    """
    unbatched, similarity, v = _prepare(layer, z)
    attention = masked_row_softmax(similarity)
    op_heads = matmul(attention, v)
    rec = _record(layer, 'standard', similarity, attention, op_heads) if record else None
    return _finish(layer, unbatched, op_heads), rec


def aas_attention(layer, z, mask_flat, record=True):
    """
    Attention activation and suppression: every column j with mask_flat[j] = 1
    is removed from all rows before the softmax.

    Returns
    -------
    (OP*, AttentionRecord or None)

    """
    unbatched, similarity, v = _prepare(layer, z)
    columns = _column_mask(mask_flat, similarity.shape[-1])
    attention = masked_row_softmax(similarity, columns)
    op_heads = matmul(attention, v)
    rec = _record(layer, 'aas', similarity, attention, op_heads) if record else None
    return _finish(layer, unbatched, op_heads), rec


def ss_attention(layer, z, mask_flat, suppression, record=True):
    """
    Similarity suppression. The object branch uses suppression * S with the
    object columns removed, the background branch is aas. Object rows of the
    output come from the object branch, background rows from the background
    branch.

    Returns
    -------
    (OP*, object branch AttentionRecord, background branch AttentionRecord)

    """
    suppression = float(suppression)
    if not 0. <= suppression <= 1.:
        raise ConfigError('Error in ss_attention: suppression factor must be in [0, 1], got ' +
                          str(suppression))
    unbatched, similarity, v = _prepare(layer, z)
    columns = _column_mask(mask_flat, similarity.shape[-1])

    attention_bg = masked_row_softmax(similarity, columns)
    op_bg = matmul(attention_bg, v)
    attention_obj = masked_row_softmax(suppression * similarity, columns)
    op_obj = matmul(attention_obj, v)

    rows = columns.view(1, 1, -1, 1)
    op_heads = torch.where(rows, op_obj, op_bg)

    rec_obj = rec_bg = None
    if record:
        rec_obj = _record(layer, 'ss-obj', suppression * similarity, attention_obj, op_obj)
        rec_bg = _record(layer, 'ss-bg', similarity, attention_bg, op_bg)
    return _finish(layer, unbatched, op_heads), rec_obj, rec_bg


def merge_ss_records(rec_obj, rec_bg, mask_flat):
    """Single record of an ss call: object rows from rec_obj, background rows from rec_bg"""
    rows = (mask_flat.reshape(-1) > 0.5).view(-1, 1)
    return AttentionRecord(rec_bg.layer_id, rec_bg.timestep, 'ss',
                           torch.where(rows, rec_obj.similarity, rec_bg.similarity),
                           torch.where(rows, rec_obj.attention, rec_bg.attention),
                           torch.where(rows, rec_obj.output, rec_bg.output))
