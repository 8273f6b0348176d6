# -*- coding: utf-8 -*-
"""
Corpus: collections of scenes and their directory format.

A corpus directory holds, for every scene named scene_NNNNN:

    scene_NNNNN_composite.png    image with the object
    scene_NNNNN_background.png   ground truth background
    scene_NNNNN_mask.png         object mask, 0/255 grayscale
    scene_NNNNN_twin.png         twin mask (twin corpora only)

plus manifest.txt (key=value: the SceneSpec, and per scene its name, seed,
shape descriptor, background family and a sha256 digest of the seed and
pixels) and a README.txt describing the layout.

@author: attneraser developers
"""
import hashlib
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch

from attneraser.Scene import Scene, SceneSpec, Shape, gen_scene
from attneraser.errors import CorpusError, CorpusIntegrityError
from attneraser.tools.imageio import read_png, read_mask, write_mask, write_png

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.txt'
README = 'README.txt'

README_TEXT = """attneraser synthetic corpus

Each scene NAME (scene_00000, scene_00001, ...) is stored as
    NAME_composite.png   8-bit image: ground truth background with one flat shape painted on it
    NAME_background.png  8-bit image: ground truth background (the ideal removal result)
    NAME_mask.png        8-bit grayscale: 255 on the shape pixels, 0 elsewhere
    NAME_twin.png        (twin corpora) 255 on a copy of the shape that is part of the background

manifest.txt lists the scene generation settings (spec.*) and for each scene
index i: scene.i.name, scene.i.seed, scene.i.family, scene.i.shape
(kind;cx;cy;rx;ry;angle;colour) and scene.i.sha256, the digest of the seed
(8 bytes, little-endian) followed by the composite, background, mask and twin
mask pixel bytes.

The composite equals the background outside the mask exactly.
"""


def scene_name(index):
    return 'scene_{:05d}'.format(index)


def scene_digest(scene):
    digest = hashlib.sha256()
    digest.update(struct.pack('<q', int(scene.seed)))
    for pixels in [scene.composite, scene.background, scene.mask, scene.twin_mask]:
        if pixels is not None:
            digest.update(pixels.contiguous().numpy().tobytes())
    return digest.hexdigest()


def gen_corpus(n_scenes, base_seed=0, spec=None, jobs=1):
    """
    Scenes with seeds base_seed, base_seed + 1, ..., generated over jobs
    threads. The result does not depend on jobs.
    """
    spec = SceneSpec() if spec is None else spec
    spec.validate()
    seeds = [base_seed + i for i in range(n_scenes)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scenes = list(pool.map(lambda seed: gen_scene(seed, spec), seeds))
    else:
        scenes = [gen_scene(seed, spec) for seed in seeds]
    logger.info('generated %d scenes from seed %d', n_scenes, base_seed)
    return scenes


def write_corpus(scenes, directory, spec=None):
    """Write scenes to directory (created if needed); returns the directory path"""
    path = Path(directory).resolve()
    path.mkdir(parents=True, exist_ok=True)
    spec = SceneSpec() if spec is None else spec
    lines = [key + '=' + value for key, value in spec.to_metadata().items()]
    lines.append('corpus.count=' + str(len(scenes)))
    for index, scene in enumerate(scenes):
        name = scene_name(index)
        write_png(scene.composite, path / (name + '_composite.png'))
        write_png(scene.background, path / (name + '_background.png'))
        write_mask(scene.mask, path / (name + '_mask.png'))
        if scene.twin_mask is not None:
            write_mask(scene.twin_mask, path / (name + '_twin.png'))
        prefix = 'scene.' + str(index) + '.'
        lines += [prefix + 'name=' + name, prefix + 'seed=' + str(scene.seed),
                  prefix + 'family=' + scene.family, prefix + 'shape=' + scene.shape.to_text(),
                  prefix + 'twin=' + str(scene.twin_mask is not None),
                  prefix + 'sha256=' + scene_digest(scene)]
    with open(path / MANIFEST, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
    with open(path / README, 'w', encoding='utf-8') as f:
        f.write(README_TEXT)
    logger.info('wrote %d scenes to %s', len(scenes), path)
    return path


def _read_manifest(path):
    manifest_path = path / MANIFEST
    if not manifest_path.exists():
        raise CorpusError('Error in read_corpus: ' + str(path) + ' has no ' + MANIFEST)
    values = {}
    with open(manifest_path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if line != '':
                key, _, value = line.partition('=')
                values[key] = value
    return values


def read_corpus_spec(directory):
    return SceneSpec.from_metadata(_read_manifest(Path(directory).resolve()))


def read_corpus(directory):
    """
    Read the scenes of a corpus directory, checking every scene against the
    manifest digest and the scene invariants.
    """
    path = Path(directory).resolve()
    values = _read_manifest(path)
    spec = SceneSpec.from_metadata(values)
    try:
        count = int(values['corpus.count'])
    except (KeyError, ValueError):
        raise CorpusError('Error in read_corpus: manifest has no valid corpus.count')

    scenes = []
    for index in range(count):
        prefix = 'scene.' + str(index) + '.'
        try:
            name = values[prefix + 'name']
            seed = int(values[prefix + 'seed'])
            family = values[prefix + 'family']
            shape = Shape.from_text(values[prefix + 'shape'])
            has_twin = values[prefix + 'twin'] == 'True'
            digest = values[prefix + 'sha256']
        except (KeyError, ValueError):
            raise CorpusError('Error in read_corpus: manifest entry for scene ' + str(index) + ' is incomplete')

        files = {part: path / (name + '_' + part + '.png') for part in ['composite', 'background', 'mask']}
        if has_twin:
            files['twin'] = path / (name + '_twin.png')
        for part, file in files.items():
            if not file.exists():
                raise CorpusError('Error in read_corpus (' + name + '): missing ' + part + ' file ' + file.name)

        scene = Scene(read_png(files['composite'], spec.channels), read_png(files['background'], spec.channels),
                      read_mask(files['mask']), shape, seed, family,
                      read_mask(files['twin']) if has_twin else None)
        if scene_digest(scene) != digest:
            raise CorpusIntegrityError('Error in read_corpus (' + name + '): content does not match the ' +
                                       'manifest digest for seed ' + str(seed))
        scene.check(spec)
        scenes.append(scene)
    logger.info('read %d scenes from %s', len(scenes), path)
    return scenes


def stack_images(scenes, target=False):
    """Composites (or backgrounds) of scenes as one float tensor (n, C, H, W) in [-1, 1]"""
    if len(scenes) == 0:
        raise CorpusError('Error in stack_images: no scenes')
    return torch.stack([scene.target() if target else scene.image() for scene in scenes])
