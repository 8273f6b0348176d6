# -*- coding: utf-8 -*-
"""
numerics: the small dense-tensor toolkit used throughout attneraser.

Tensors are torch tensors. Model weights and activations are float32; the
products and reductions below accumulate in float64 and return the dtype of
their input, so that the attention rows stay normalized to well below 1e-9.

Random numbers come from numpy's counter based Philox generator. A stream is
fully defined by (seed, stream) and reproduces bit for bit on every platform.

The masked softmax never stores -inf. A boolean mask marks the columns that
take no part in the softmax and those entries are set to exactly zero.

@author: attneraser developers
"""

import numpy as np
import torch

from attneraser.errors import DimensionError, DegenerateMaskError

ACCUMULATE_DTYPE = torch.float64

KMEANS_MAX_ITER = 100
KMEANS_TOLERANCE = 1.e-6


def make_rng(seed, stream=0):
    """
    Return a numpy Generator driven by Philox, keyed by (seed, stream).

    Parameters
    ----------
    seed : int, 64-bit seed
    stream : int, index of an independent stream (eg. run index in a batch)

    Returns
    -------
    numpy.random.Generator

    """
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError('Error in make_rng: seed must be an integer')
    if seed < 0 or stream < 0:
        raise ValueError('Error in make_rng: seed and stream must be non-negative')
    sequence = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(sequence))


def gaussian(rng, shape, dtype=torch.float32):
    """Standard normal tensor drawn from rng"""
    values = rng.standard_normal(tuple(shape))
    return torch.from_numpy(values).to(dtype)


def check_finite(x, name='tensor'):
    if not bool(torch.isfinite(x).all()):
        raise ValueError('Error in ' + name + ': values must be finite')


def matmul(a, b):
    """
    Matrix product of a (..., m, k) and b (..., k, n). Leading dimensions
    broadcast as in torch.matmul.

    The product is accumulated in float64 and returned in the promoted dtype
    of the inputs.
    """
    if a.dim() < 2 or b.dim() < 2:
        raise DimensionError('Error in matmul: operands must have rank >= 2, got ' +
                             str(tuple(a.shape)) + ' and ' + str(tuple(b.shape)))
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError('Error in matmul: inner extents do not match: ' +
                             str(tuple(a.shape)) + ' x ' + str(tuple(b.shape)))
    out_dtype = torch.promote_types(a.dtype, b.dtype)
    product = torch.matmul(a.to(ACCUMULATE_DTYPE), b.to(ACCUMULATE_DTYPE))
    return product.to(out_dtype)


def masked_row_softmax(s, mask=None):
    """
    Row softmax of s (..., r, c) where the columns flagged in mask get exactly
    zero weight and the remaining columns are renormalized.

    Parameters
    ----------
    s : Tensor (..., r, c), logits. Masked entries may hold any value, including
        an infinite sentinel.
    mask : bool Tensor broadcastable to s, or None. True marks a masked entry.

    Returns
    -------
    Tensor of the dtype of s, every row summing to 1.

    """
    if s.dim() < 1:
        raise DimensionError('Error in masked_row_softmax: logits must have rank >= 1')
    logits = s.to(ACCUMULATE_DTYPE)

    if mask is None:
        check_finite(logits, 'masked_row_softmax')
        row_max = logits.amax(dim=-1, keepdim=True)
        weights = torch.exp(logits - row_max)
        return (weights / weights.sum(dim=-1, keepdim=True)).to(s.dtype)

    if mask.dtype != torch.bool:
        raise TypeError('Error in masked_row_softmax: mask must be a boolean tensor')
    try:
        mask = mask.expand_as(logits)
    except RuntimeError:
        raise DimensionError('Error in masked_row_softmax: mask shape ' + str(tuple(mask.shape)) +
                             ' does not broadcast to ' + str(tuple(s.shape)))

    if bool(mask.all(dim=-1).any()):
        raise DegenerateMaskError('Error in masked_row_softmax: a row has every column masked ' +
                                  '(all-foreground attention resolution)')

    kept = torch.where(mask, torch.zeros_like(logits), logits)
    check_finite(kept, 'masked_row_softmax')
    floor = torch.finfo(ACCUMULATE_DTYPE).min
    row_max = torch.where(mask, torch.full_like(logits, floor), logits).amax(dim=-1, keepdim=True)
    weights = torch.exp(torch.where(mask, row_max, logits) - row_max)
    weights = torch.where(mask, torch.zeros_like(weights), weights)
    return (weights / weights.sum(dim=-1, keepdim=True)).to(s.dtype)


def _fix_sign(vectors):
    # largest magnitude loading of each row made positive
    index = vectors.abs().argmax(dim=-1, keepdim=True)
    signs = torch.sign(torch.gather(vectors, -1, index))
    signs = torch.where(signs == 0, torch.ones_like(signs), signs)
    return vectors * signs, signs.squeeze(-1)


def pca_top(x, k):
    """
    Project the mean-centred rows of x (n, f) on its top k principal
    directions. Each direction has its largest magnitude loading positive.

    Returns
    -------
    Tensor (n, k)

    """
    if x.dim() != 2:
        raise DimensionError('Error in pca_top: data must be a matrix')
    n, f = x.shape
    if k > f:
        raise DimensionError('Error in pca_top: k (' + str(k) + ') exceeds the feature count (' +
                             str(f) + ')')
    if not 1 <= k <= n:
        raise DimensionError('Error in pca_top: need n >= k >= 1, got n=' + str(n) + ', k=' + str(k))
    data = x.to(ACCUMULATE_DTYPE)
    centred = data - data.mean(dim=0, keepdim=True)
    _, _, vh = torch.linalg.svd(centred, full_matrices=False)
    directions, _ = _fix_sign(vh[:k])
    return torch.matmul(centred, directions.T).to(x.dtype)


def svd_top1(m):
    """
    Best rank one approximation sigma * u v^T of m (r, c) in Frobenius norm.
    The sign of the pair is fixed so that the largest magnitude entry of v is
    positive.

    Returns
    -------
    (u, sigma, v) with u (r,), sigma a python float, v (c,)

    """
    if m.dim() != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError('Error in svd_top1: argument must be a non-empty matrix')
    u_all, s_all, vh_all = torch.linalg.svd(m.to(ACCUMULATE_DTYPE), full_matrices=False)
    v, sign = _fix_sign(vh_all[0])
    u = u_all[:, 0] * sign
    return u.to(m.dtype), float(s_all[0]), v.to(m.dtype)


def _kmeans_plus_plus(points, k, rng):
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = closest.sum()
        if total > 0.:
            index = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a centre already: pick an unused index
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(remaining[rng.integers(len(remaining))])
        chosen.append(index)
        closest = np.minimum(closest, ((points - points[index]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(x, k, rng):
    """
    Lloyd k-means of the rows of x (n, f) with k-means++ seeding drawn from rng.
    Stops after KMEANS_MAX_ITER iterations or when no centre moves by more than
    KMEANS_TOLERANCE.

    Returns
    -------
    labels : int64 Tensor (n,)

    """
    if x.dim() != 2:
        raise DimensionError('Error in kmeans: data must be a matrix')
    n = x.shape[0]
    if not 1 <= k <= n:
        raise DimensionError('Error in kmeans: need n >= k >= 1, got n=' + str(n) + ', k=' + str(k))
    points = x.detach().to(ACCUMULATE_DTYPE).cpu().numpy()
    centres = _kmeans_plus_plus(points, k, rng)

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        distances = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        labels = distances.argmin(axis=1)
        updated = centres.copy()
        for cluster in range(k):
            members = points[labels == cluster]
            if len(members) > 0:
                updated[cluster] = members.mean(axis=0)
        movement = np.sqrt(((updated - centres) ** 2).sum(axis=1)).max()
        centres = updated
        if movement <= KMEANS_TOLERANCE:
            break
    distances = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    labels = distances.argmin(axis=1)
    return torch.from_numpy(labels.astype(np.int64))


def inertia(x, labels):
    """Sum of squared distances of the rows of x to their cluster means"""
    points = x.detach().to(ACCUMULATE_DTYPE)
    total = 0.
    for cluster in torch.unique(labels):
        members = points[labels == cluster]
        total += float(((members - members.mean(dim=0, keepdim=True)) ** 2).sum())
    return total
