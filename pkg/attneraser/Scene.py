# -*- coding: utf-8 -*-
"""
Scene: a synthetic image with exact object removal ground truth.

The background is drawn first and kept; a flat coloured shape is then painted
on a copy of it to give the composite. Shapes are rasterized by testing pixel
centres, without anti-aliasing, so that

    - composite == background outside the mask, exactly
    - the mask is exactly the set of painted pixels
    - the mask coverage lies in [min_coverage, max_coverage]

Background families:
    - gradient: linear blend of two colours along a random direction
    - lowfreq: a coarse Gaussian grid, cubic-zoomed to the image size
    - stripes: two colours alternating with a random period and orientation

With spec.twin set, a second copy of the shape is painted into the
background itself (it is ground truth, not something to remove) and its
pixels are kept in twin_mask.

@author: attneraser developers
"""
import math
from dataclasses import dataclass, fields

import numpy as np
import torch
from scipy import ndimage

from attneraser.RemovalMask import RemovalMask
from attneraser.errors import ConfigError, CorpusError, CorpusIntegrityError
from attneraser.numerics import make_rng

SHAPE_KINDS = ['disk', 'rectangle', 'triangle']
BACKGROUND_FAMILIES = ['gradient', 'lowfreq', 'stripes']


def _as_tuple(text):
    return tuple(item for item in text.split(',') if item != '')


@dataclass
class SceneSpec:
    """
    What gen_scene may produce:
        - image_size: side of the square image in pixels
        - channels: 1 or 3
        - kinds: allowed shape kinds
        - families: allowed background families
        - min_coverage, max_coverage: bounds of the mask area fraction
        - twin: paint a copy of the shape into the background
        - max_attempts: placements tried before giving up
    """
    image_size: int = 64
    channels: int = 3
    kinds: tuple = ('disk', 'rectangle', 'triangle')
    families: tuple = ('gradient', 'lowfreq', 'stripes')
    min_coverage: float = 0.02
    max_coverage: float = 0.40
    twin: bool = False
    max_attempts: int = 200

    def validate(self):
        if self.image_size < 4:
            raise ConfigError('Error in SceneSpec: image_size must be at least 4')
        if self.channels not in [1, 3]:
            raise ConfigError('Error in SceneSpec: channels must be 1 or 3')
        if len(self.kinds) == 0 or any(kind not in SHAPE_KINDS for kind in self.kinds):
            raise ConfigError('Error in SceneSpec: kinds must be a non-empty subset of ' +
                              '/'.join(SHAPE_KINDS))
        if len(self.families) == 0 or any(family not in BACKGROUND_FAMILIES for family in self.families):
            raise ConfigError('Error in SceneSpec: families must be a non-empty subset of ' +
                              '/'.join(BACKGROUND_FAMILIES))
        if not 0. < self.min_coverage <= self.max_coverage < 1.:
            raise ConfigError('Error in SceneSpec: need 0 < min_coverage <= max_coverage < 1')
        if self.max_attempts < 1:
            raise ConfigError('Error in SceneSpec: max_attempts must be positive')

    def to_metadata(self):
        metadata = {}
        for field in fields(self):
            value = getattr(self, field.name)
            if isinstance(value, tuple):
                value = ','.join(value)
            metadata['spec.' + field.name] = str(value)
        return metadata

    @classmethod
    def from_metadata(cls, metadata):
        try:
            spec = cls(int(metadata['spec.image_size']), int(metadata['spec.channels']),
                       _as_tuple(metadata['spec.kinds']), _as_tuple(metadata['spec.families']),
                       float(metadata['spec.min_coverage']), float(metadata['spec.max_coverage']),
                       metadata['spec.twin'] == 'True', int(metadata['spec.max_attempts']))
        except KeyError as error:
            raise CorpusError('Error in SceneSpec.from_metadata: missing ' + str(error))
        spec.validate()
        return spec


@dataclass
class Shape:
    """Flat coloured shape: centre (cx, cy), radii (rx, ry) and rotation in pixels/radians"""
    kind: str
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float
    color: tuple

    def moved(self, cx, cy):
        return Shape(self.kind, cx, cy, self.rx, self.ry, self.angle, self.color)

    def to_text(self):
        return (self.kind + ';' + ';'.join(repr(float(v)) for v in [self.cx, self.cy, self.rx, self.ry, self.angle]) +
                ';' + ','.join(str(c) for c in self.color))

    @classmethod
    def from_text(cls, text):
        parts = text.split(';')
        if len(parts) != 7 or parts[0] not in SHAPE_KINDS:
            raise CorpusError('Error in Shape.from_text: cannot read "' + text + '"')
        cx, cy, rx, ry, angle = (float(p) for p in parts[1:6])
        return cls(parts[0], cx, cy, rx, ry, angle, tuple(int(c) for c in parts[6].split(',')))


def rasterize(shape, size):
    """Boolean (size, size) array of the pixels whose centres lie in the shape"""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    if shape.kind == 'disk':
        return (x - shape.cx) ** 2 + (y - shape.cy) ** 2 <= shape.rx ** 2
    if shape.kind == 'rectangle':
        c, s = math.cos(shape.angle), math.sin(shape.angle)
        u = (x - shape.cx) * c + (y - shape.cy) * s
        v = -(x - shape.cx) * s + (y - shape.cy) * c
        return (np.abs(u) <= shape.rx) & (np.abs(v) <= shape.ry)
    # triangle: intersection of three half planes
    vertices = [(shape.cx + shape.rx * math.cos(shape.angle + i * 2. * math.pi / 3.),
                 shape.cy + shape.ry * math.sin(shape.angle + i * 2. * math.pi / 3.)) for i in range(3)]
    inside = np.ones((size, size), dtype=bool)
    for i in range(3):
        (x0, y0), (x1, y1) = vertices[i], vertices[(i + 1) % 3]
        (x2, y2) = vertices[(i + 2) % 3]
        side = np.sign((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0))
        inside &= side * ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)) >= 0.
    return inside


class Scene:
    """
    One corpus item:
        - composite: uint8 Tensor (C, H, W), the image with the object
        - background: uint8 Tensor (C, H, W), ground truth after perfect removal
        - mask: uint8 Tensor (H, W), 1 on the object pixels
        - shape: Shape descriptor of the object
        - seed: seed the scene was generated from
        - family: background family
        - twin_mask: uint8 Tensor (H, W) of the twin pixels, or None
    """

    def __init__(self, composite, background, mask, shape, seed, family, twin_mask=None):
        self.composite = composite
        self.background = background
        self.mask = mask
        self.shape = shape
        self.seed = seed
        self.family = family
        self.twin_mask = twin_mask

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return False
        same_twin = (self.twin_mask is None and other.twin_mask is None) or \
            (self.twin_mask is not None and other.twin_mask is not None and
             torch.equal(self.twin_mask, other.twin_mask))
        return (torch.equal(self.composite, other.composite) and
                torch.equal(self.background, other.background) and
                torch.equal(self.mask, other.mask) and self.shape == other.shape and
                self.seed == other.seed and self.family == other.family and same_twin)

    def coverage(self):
        return float(self.mask.to(torch.float64).mean())

    def image(self):
        """Composite as float32 in [-1, 1]"""
        return to_signed(self.composite)

    def target(self):
        """Background as float32 in [-1, 1]"""
        return to_signed(self.background)

    def removal_mask(self, resolutions=()):
        return RemovalMask(self.mask.to(torch.float32), resolutions)

    def check(self, spec=None):
        """
        Raise CorpusIntegrityError unless the scene satisfies its invariants.
        Coverage bounds are checked against spec if given.
        """
        name = 'scene ' + str(self.seed)
        if self.composite.shape != self.background.shape or self.composite.dim() != 3:
            raise CorpusIntegrityError('Error in ' + name + ': composite and background shapes differ')
        if tuple(self.mask.shape) != tuple(self.composite.shape[1:]):
            raise CorpusIntegrityError('Error in ' + name + ': mask shape does not match the image')
        if not bool(((self.mask == 0) | (self.mask == 1)).all()):
            raise CorpusIntegrityError('Error in ' + name + ': mask is not binary')
        outside = (self.mask == 0)[None].expand_as(self.composite)
        if not torch.equal(self.composite[outside], self.background[outside]):
            raise CorpusIntegrityError('Error in ' + name + ': composite differs from background outside the mask')
        painted = torch.from_numpy(rasterize(self.shape, self.mask.shape[0]).astype(np.uint8))
        if not torch.equal(painted, self.mask):
            raise CorpusIntegrityError('Error in ' + name + ': mask does not match the shape pixels')
        color = torch.tensor(self.shape.color, dtype=torch.uint8)[:, None]
        inside = self.composite[:, self.mask == 1]
        if inside.shape[1] > 0 and not bool((inside == color).all()):
            raise CorpusIntegrityError('Error in ' + name + ': object pixels do not carry the shape colour')
        if spec is not None and not spec.min_coverage <= self.coverage() <= spec.max_coverage:
            raise CorpusIntegrityError('Error in ' + name + ': coverage ' + '{:.4f}'.format(self.coverage()) +
                                       ' outside [' + str(spec.min_coverage) + ', ' + str(spec.max_coverage) + ']')


def to_signed(pixels):
    """uint8 [0, 255] -> float32 [-1, 1]"""
    return pixels.to(torch.float32) / 127.5 - 1.


def _background(rng, family, size, channels):
    if family == 'gradient':
        c0 = rng.uniform(0., 255., channels)
        c1 = rng.uniform(0., 255., channels)
        angle = rng.uniform(0., 2. * math.pi)
        y, x = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
        proj = (x - size / 2.) * math.cos(angle) + (y - size / 2.) * math.sin(angle)
        weight = (proj - proj.min()) / max(proj.max() - proj.min(), 1.e-12)
        values = c0[:, None, None] + (c1 - c0)[:, None, None] * weight[None]
    elif family == 'lowfreq':
        cells = int(rng.integers(3, 7))
        coarse = rng.standard_normal((channels, cells, cells))
        values = np.stack([ndimage.zoom(coarse[c], size / cells, order=3, mode='nearest')[:size, :size]
                           for c in range(channels)])
        low, high = values.min(), values.max()
        centre = rng.uniform(60., 195., channels)
        values = centre[:, None, None] + 60. * (values - (low + high) / 2.) / max(high - low, 1.e-12)
    else:
        c0 = rng.uniform(0., 255., channels)
        c1 = rng.uniform(0., 255., channels)
        period = int(rng.integers(6, 17))
        orientation = int(rng.integers(3))
        y, x = np.mgrid[0:size, 0:size]
        coordinate = [x, y, x + y][orientation]
        phase = int(rng.integers(period))
        stripe = ((coordinate + phase) // (period // 2 if period > 2 else 1)) % 2
        values = np.where(stripe[None] == 0, c0[:, None, None], c1[:, None, None])
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _draw_shape(rng, kind, size, channels):
    radius = rng.uniform(0.08, 0.4) * size
    aspect = rng.uniform(0.5, 1.)
    rx, ry = (radius, radius) if kind == 'disk' else (radius, radius * aspect)
    cx = rng.uniform(0., size)
    cy = rng.uniform(0., size)
    angle = rng.uniform(0., 2. * math.pi) if kind != 'disk' else 0.
    color = tuple(int(c) for c in rng.integers(0, 256, channels))
    return Shape(kind, cx, cy, rx, ry, angle, color)


def _paint(image, pixels, color):
    out = image.copy()
    for c in range(image.shape[0]):
        out[c][pixels] = color[c]
    return out


def gen_scene(seed, spec=None):
    """
    Deterministic scene from (seed, spec).

    Raises CorpusError if no placement within spec.max_attempts satisfies
    the coverage bounds.
    """
    spec = SceneSpec() if spec is None else spec
    spec.validate()
    rng = make_rng(seed)
    size = spec.image_size
    family = spec.families[int(rng.integers(len(spec.families)))]
    background = _background(rng, family, size, spec.channels)

    for _ in range(spec.max_attempts):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        shape = _draw_shape(rng, kind, size, spec.channels)
        pixels = rasterize(shape, size)
        if not spec.min_coverage <= pixels.mean() <= spec.max_coverage:
            continue
        twin_pixels = None
        if spec.twin:
            reach = max(shape.rx, shape.ry)
            if 2. * reach >= size:
                continue
            for _ in range(spec.max_attempts):
                twin = shape.moved(rng.uniform(reach, size - reach), rng.uniform(reach, size - reach))
                candidate = rasterize(twin, size)
                # the twin lies inside the image and apart from the object
                if candidate.any() and not (ndimage.binary_dilation(pixels) & candidate).any():
                    twin_pixels = candidate
                    break
            if twin_pixels is None:
                continue
        ground_truth = background if twin_pixels is None else _paint(background, twin_pixels, shape.color)
        composite = _paint(ground_truth, pixels, shape.color)
        return Scene(torch.from_numpy(composite), torch.from_numpy(ground_truth),
                     torch.from_numpy(pixels.astype(np.uint8)), shape, seed, family,
                     None if twin_pixels is None else torch.from_numpy(twin_pixels.astype(np.uint8)))

    raise CorpusError('Error in gen_scene (seed ' + str(seed) + '): no placement within ' +
                      str(spec.max_attempts) + ' attempts has coverage in [' + str(spec.min_coverage) +
                      ', ' + str(spec.max_coverage) + ']')
