# -*- coding: utf-8 -*-
"""
PNG input and output for images and masks (Pillow).

Images are held as uint8 tensors (C, H, W) or as float32 tensors in [-1, 1];
masks as uint8 tensors (H, W) of zeros and ones, stored as 0/255 grayscale.
Pixels are quantized as round((x + 1) * 127.5), clipped to [0, 255].

@author: attneraser developers
"""
from pathlib import Path

import numpy as np
import torch
from PIL import Image

MODES = {1: 'L', 3: 'RGB'}


def to_uint8(image):
    """float [-1, 1] (C, H, W) -> uint8 (C, H, W)"""
    values = torch.round((image.detach().to(torch.float64) + 1.) * 127.5)
    return values.clamp(0., 255.).to(torch.uint8)


def write_png(pixels, filename):
    """Write a uint8 tensor (C, H, W) with C in {1, 3}; returns the path"""
    if pixels.dtype != torch.uint8 or pixels.dim() != 3 or pixels.shape[0] not in MODES:
        raise ValueError('Error in write_png: need a uint8 (1 or 3, H, W) tensor, got ' +
                         str(pixels.dtype) + ' ' + str(tuple(pixels.shape)))
    path = Path(filename).resolve()
    array = pixels.permute(1, 2, 0).cpu().numpy()
    if pixels.shape[0] == 1:
        array = array[:, :, 0]
    Image.fromarray(np.ascontiguousarray(array), MODES[pixels.shape[0]]).save(path, format='PNG')
    return path


def read_png(filepath, channels=None):
    """Read a PNG as uint8 (C, H, W); channels converts to 1 (L) or 3 (RGB)"""
    path = Path(filepath).resolve()
    if not path.exists():
        raise FileNotFoundError('Error in read_png: ' + str(path) + ' not found')
    with Image.open(path) as image:
        if channels is None:
            channels = 1 if image.mode in ['L', '1', 'I', 'I;16'] else 3
        array = np.asarray(image.convert(MODES[channels]))
    if array.ndim == 2:
        array = array[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)))


def write_image(image, filename):
    """Write a float image in [-1, 1]"""
    return write_png(to_uint8(image), filename)


def read_image(filepath, channels=None):
    """Read a PNG as float32 (C, H, W) in [-1, 1]"""
    return read_png(filepath, channels).to(torch.float32) / 127.5 - 1.


def write_mask(mask, filename):
    return write_png((mask.to(torch.uint8) * 255)[None], filename)


def read_mask(filepath):
    """Grayscale PNG mask as uint8 (H, W): 1 where the value is above 127"""
    return (read_png(filepath, 1)[0] > 127).to(torch.uint8)
