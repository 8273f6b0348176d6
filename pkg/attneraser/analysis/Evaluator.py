# -*- coding: utf-8 -*-
"""
Evaluator: removal quality measured against the synthetic ground truth.

Perceptual scores (FID, LPIPS, CLIP) need pre-trained networks; they are
replaced here by exact pixel metrics against the known background:

    - masked_mse: mean squared error over the mask pixels (lower is better)
    - removal strength: masked_mse between the result and the ORIGINAL
      composite, i.e. how far the object has been moved away from
    - background_drift: largest absolute change outside the mask

removal_report runs every config on every scene. Runs are independent and
spread over a thread pool; run i of a config uses noise stream i, so the
numbers do not depend on the number of jobs.

@author: attneraser developers
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import stats
from tqdm import tqdm

from attneraser.Attention import AttentionMode
from attneraser.Denoiser import predict
from attneraser.Pipeline import remove
from attneraser.RemovalMask import flatten_mask
from attneraser.errors import DimensionError
from attneraser.numerics import gaussian, make_rng
from attneraser.tools.table import report_table

logger = logging.getLogger(__name__)

REPORT_HEADER = ('# attneraser removal report\n'
                 '# pixel metrics against the exact synthetic ground truth stand in for FID/LPIPS/CLIP\n'
                 '# images in [-1, 1]; masked_mse: result vs background inside the mask;\n'
                 '# strength: result vs original composite inside the mask; drift: max abs change outside\n')

CSV_COLUMNS = ['config', 'pipeline', 'scale', 'suppression', 'steps', 'ss_cutoff', 'seed', 'guidance',
               'scenes', 'mse_mean', 'mse_sd', 'strength_mean', 'strength_sd', 'drift_max']


def _pixel_mask(result, mask):
    if mask.shape == result.shape:
        selected = mask
    elif mask.dim() == result.dim() - 1 and tuple(mask.shape) == tuple(result.shape[1:]):
        selected = mask[None].expand_as(result)
    else:
        raise DimensionError('Error in evaluation: mask shape ' + str(tuple(mask.shape)) +
                             ' does not fit the image shape ' + str(tuple(result.shape)))
    return selected > 0.5


def masked_mse(result, reference, mask):
    """Mean squared error over the pixels (all channels) where mask == 1"""
    if result.shape != reference.shape:
        raise DimensionError('Error in masked_mse: shapes ' + str(tuple(result.shape)) + ' and ' +
                             str(tuple(reference.shape)) + ' differ')
    inside = _pixel_mask(result, mask)
    if not bool(inside.any()):
        raise ValueError('Error in masked_mse: mask is empty')
    difference = result.to(torch.float64)[inside] - reference.to(torch.float64)[inside]
    return float((difference ** 2).mean())


def background_drift(result, original, mask):
    """Largest absolute difference over the pixels where mask == 0 (0 if there are none)"""
    if result.shape != original.shape:
        raise DimensionError('Error in background_drift: shapes ' + str(tuple(result.shape)) + ' and ' +
                             str(tuple(original.shape)) + ' differ')
    outside = ~_pixel_mask(result, mask)
    if not bool(outside.any()):
        return 0.
    return float((result.to(torch.float64)[outside] - original.to(torch.float64)[outside]).abs().max())


def removal_strength(result, composite, mask):
    return masked_mse(result, composite, mask)


@dataclass
class SceneResult:
    config_index: int
    scene_index: int
    seed: int
    mse: float
    strength: float
    drift: float


@dataclass
class ReportRow:
    label: str
    config: object
    n_scenes: int
    mse_mean: float
    mse_sd: float
    strength_mean: float
    strength_sd: float
    drift_max: float


class Report:
    """
    Results of removal_report:
        - configs: the RemovalConfig list, in row order
        - per_scene: list (per config) of lists of SceneResult in scene order
        - rows: one ReportRow per config
    """

    def __init__(self, configs, per_scene):
        self.configs = configs
        self.per_scene = per_scene
        self.rows = []
        for config, results in zip(configs, per_scene):
            mse = np.array([r.mse for r in results])
            strength = np.array([r.strength for r in results])
            drift = np.array([r.drift for r in results])
            ddof = 1 if len(results) > 1 else 0
            self.rows.append(ReportRow(config.label(), config, len(results),
                                       float(mse.mean()), float(mse.std(ddof=ddof)),
                                       float(strength.mean()), float(strength.std(ddof=ddof)),
                                       float(drift.max())))

    def mse(self, index):
        return [r.mse for r in self.per_scene[index]]

    def win_fraction(self, index, baseline):
        """Fraction of scenes where config index has lower masked_mse than config baseline"""
        return win_fraction(self.mse(index), self.mse(baseline))

    def improvement(self, index, baseline):
        """Relative reduction of the mean masked_mse of config index against config baseline"""
        base = self.rows[baseline].mse_mean
        return (base - self.rows[index].mse_mean) / base if base > 0. else 0.

    def table(self, width=160):
        return report_table(self, width)

    def csv_lines(self):
        lines = [','.join(CSV_COLUMNS)]
        for row in self.rows:
            c = row.config
            lines.append(','.join([row.label.replace(',', ';'), c.pipeline, repr(c.scale), repr(c.suppression),
                                   str(c.steps), str(c.ss_cutoff), str(c.seed), c.guidance, str(row.n_scenes),
                                   repr(row.mse_mean), repr(row.mse_sd), repr(row.strength_mean),
                                   repr(row.strength_sd), repr(row.drift_max)]))
        return lines

    def text(self):
        return REPORT_HEADER + self.table() + '\n'

    def save(self, directory):
        """Write report.txt and report.csv into directory; returns both paths"""
        path = Path(directory).resolve()
        path.mkdir(parents=True, exist_ok=True)
        with open(path / 'report.txt', 'w', encoding='utf-8') as f:
            f.write(self.text())
        with open(path / 'report.csv', 'w', encoding='utf-8') as f:
            f.write('\n'.join(self.csv_lines()) + '\n')
        return path / 'report.txt', path / 'report.csv'


def _evaluate(checkpoint, scene, scene_index, config, config_index):
    image = scene.image()
    result, _ = remove(checkpoint, image, scene.removal_mask(), config, stream=scene_index)
    mask = scene.mask
    return SceneResult(config_index, scene_index, scene.seed,
                       masked_mse(result, scene.target(), mask),
                       removal_strength(result, image, mask),
                       background_drift(result, image, mask))


def removal_report(scenes, checkpoint, configs, jobs=1, progress=False):
    """
    Run every config on every scene.

    Parameters
    ----------
    scenes : list of Scene
    checkpoint : Checkpoint
    configs : list of RemovalConfig
    jobs : number of worker threads
    progress : show a progress bar

    Returns
    -------
    Report

    """
    if len(scenes) == 0 or len(configs) == 0:
        raise ValueError('Error in removal_report: need at least one scene and one config')
    tasks = [(c, i) for c in range(len(configs)) for i in range(len(scenes))]

    def run(task):
        c, i = task
        return _evaluate(checkpoint, scenes[i], i, configs[c], c)

    with tqdm(total=len(tasks), disable=not progress, desc='eval') as bar:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = []
                for result in pool.map(run, tasks):
                    results.append(result)
                    bar.update(1)
        else:
            results = []
            for task in tasks:
                results.append(run(task))
                bar.update(1)

    per_scene = [[r for r in results if r.config_index == c] for c in range(len(configs))]
    report = Report(configs, per_scene)
    for row in report.rows:
        logger.info('%s: masked mse %.5f, strength %.5f, drift %.2e', row.label, row.mse_mean,
                    row.strength_mean, row.drift_max)
    return report


def win_fraction(mse, baseline_mse):
    """Fraction of paired entries where mse is strictly below baseline_mse"""
    if len(mse) != len(baseline_mse) or len(mse) == 0:
        raise ValueError('Error in win_fraction: need two non-empty lists of equal length')
    return float(np.mean(np.array(mse) < np.array(baseline_mse)))


def twin_attention_mass(checkpoint, scene, config, suppression, stream=0):
    """
    Mean attention mass that the object rows of the rewritten decoder layers
    put on the twin tokens, with similarity suppression factor suppression.

    The latent of the scene is noised to every step index of the suppression
    window (one noise draw per step from (config.seed, stream)); at each step
    one prediction in mode AAS_SS(suppression) is recorded.
    """
    if scene.twin_mask is None:
        raise ValueError('Error in twin_attention_mass: scene ' + str(scene.seed) + ' has no twin')
    model = checkpoint.model
    schedule = checkpoint.schedule.with_inference_steps(config.steps)
    z0 = checkpoint.codec.encode(scene.image()[None])
    mask = scene.removal_mask(model.config.attention_resolutions)
    mode = AttentionMode.aas_ss(suppression)
    rng = make_rng(config.seed, stream)
    twin = scene.twin_mask.to(torch.float32)

    masses = []
    for k in range(config.steps, config.ss_cutoff - 1, -1):
        t = schedule.timestep(k)
        z_t = schedule.add_noise(z0, t, gaussian(rng, z0.shape, z0.dtype))
        _, records = predict(model, z_t, t, mode, mask, record=True)
        for rec in records:
            if rec.mode != 'ss':
                continue
            n = rec.resolution()
            rows = mask.flat(n).reshape(-1) > 0.5
            columns = (flatten_mask(twin, n).reshape(-1) > 0.5) & ~rows
            if not bool(columns.any()):
                continue
            masses.append(float(rec.attention.to(torch.float64)[rows][:, columns].sum(dim=1).mean()))
    if len(masses) == 0:
        raise ValueError('Error in twin_attention_mass: no rewritten layer separates object and twin tokens')
    return float(np.mean(masses))


def ss_efficacy_probe(scenes, checkpoint, config, low=0.3, high=1.0):
    """
    Paired comparison of twin_attention_mass at suppression factors low and
    high over the twin scenes. Returns a dict with the two means, the paired
    t statistic and the one sided p-value for mass(low) < mass(high).
    """
    low_mass = []
    high_mass = []
    for index, scene in enumerate(scenes):
        try:
            a = twin_attention_mass(checkpoint, scene, config, low, index)
            b = twin_attention_mass(checkpoint, scene, config, high, index)
        except ValueError as error:
            logger.debug('scene %d skipped: %s', scene.seed, error)
            continue
        low_mass.append(a)
        high_mass.append(b)
    if len(low_mass) < 2:
        raise ValueError('Error in ss_efficacy_probe: fewer than two usable twin scenes')
    statistic, p_value = stats.ttest_rel(low_mass, high_mass, alternative='less')
    result = {'scenes': len(low_mass), 'mean_low': float(np.mean(low_mass)), 'mean_high': float(np.mean(high_mass)),
              'statistic': float(statistic), 'p_value': float(p_value),
              'suppressed': bool(p_value < 0.05 and np.mean(low_mass) < np.mean(high_mass))}
    logger.info('ss efficacy: twin mass %.4f (lambda=%g) vs %.4f (lambda=%g), p=%.3g', result['mean_low'], low,
                result['mean_high'], high, p_value)
    return result
