# -*- coding: utf-8 -*-
"""
RemovalMask: the binary object mask (1 = foreground object) together with its
flattened versions at each attention resolution of the denoiser.

Downsampling uses area pooling followed by a '> 0' threshold: a coarse token
is foreground as soon as any of its pixels is. The same rule produces the
mask used for latent blending.

@author: attneraser developers
"""
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from attneraser.errors import DimensionError, DegenerateMaskError


def _pool_any(base, height, width):
    rows, cols = base.shape
    if height < 1 or width < 1 or rows % height != 0 or cols % width != 0:
        raise DimensionError('Error in flatten_mask: resolution ' + str((height, width)) +
                             ' does not divide the mask shape ' + str((rows, cols)))
    pooled = F.avg_pool2d(base.to(torch.float64)[None, None],
                          kernel_size=(rows // height, cols // width))
    return (pooled[0, 0] > 0.).to(torch.float32)


def flatten_mask(base, n):
    """
    Downsample a binary mask (H, W) to an n x n token grid (any coverage rule)
    and flatten it row-major.

    Returns
    -------
    Tensor (1, n*n) of zeros and ones

    """
    if base.dim() != 2:
        raise DimensionError('Error in flatten_mask: mask must be two dimensional')
    return _pool_any(base, n, n).reshape(1, n * n)


class RemovalMask:
    """
    Object mask for removal:
        - base: binary Tensor (H, W), 1 = object
        - resolutions: token grid sizes n of the attention layers that will see the mask
    """

    def __init__(self, base, resolutions=()):
        if not isinstance(base, torch.Tensor) or base.dim() != 2:
            raise DimensionError('Error in constructing RemovalMask: base must be a 2-d Tensor')
        if not bool(((base == 0) | (base == 1)).all()):
            raise ValueError('Error in constructing RemovalMask: base must contain only 0 and 1')
        self.base = base.to(torch.float32)
        self.per_resolution = {}
        for n in resolutions:
            self.add_resolution(n)

    def __str__(self):
        return ('RemovalMask(' + 'x'.join(str(e) for e in self.base.shape) + ', coverage=' +
                '{:.3f}'.format(self.coverage()) + ')')

    def add_resolution(self, n):
        flat = flatten_mask(self.base, int(n))
        if bool((flat == 1).all()):
            raise DegenerateMaskError('Error in RemovalMask: the mask covers every token at resolution ' +
                                      str(n))
        self.per_resolution[int(n)] = flat
        return flat

    def flat(self, n):
        """Flattened (1, n*n) mask at token grid size n"""
        if n not in self.per_resolution:
            return self.add_resolution(n)
        return self.per_resolution[n]

    def latent(self, height, width):
        """Blending mask (1, 1, height, width) at the latent resolution"""
        return _pool_any(self.base, height, width)[None, None]

    def is_empty(self):
        return not bool((self.base > 0).any())

    def coverage(self):
        return float(self.base.mean())

    @classmethod
    def open_file(cls, filepath, resolutions=()):
        """Grayscale PNG mask: pixel values > 127 are foreground"""
        with Image.open(filepath) as image:
            pixels = np.asarray(image.convert('L'))
        return cls(torch.from_numpy((pixels > 127).astype(np.float32)), resolutions)
