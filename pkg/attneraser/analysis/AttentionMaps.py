# -*- coding: utf-8 -*-
"""
AttentionMaps: diagnostics of the self-attention maps kept in removal traces.

    - average_attention: mean attention map of one layer over the timesteps
    - token_clusters: PCA of the averaged rows followed by k-means, giving a
      layout map of the tokens
    - top1_heatmap: right singular vector of the top SVD component of one map
    - export_heatmap / export_clusters: PNG figures with fixed colours

Heatmaps use a fixed 256 entry viridis-like table (HEATMAP_LUT), built once
by linear interpolation between the anchors below and rounded to 8 bits. A
value v in [0, 1] is drawn with entry floor(255 v + 0.5).

Figures of a trace go to {run}/{layer}/{timestep}_{mode}.png.

@author: attneraser developers
"""
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from attneraser.errors import DimensionError
from attneraser.numerics import kmeans, make_rng, pca_top, svd_top1

logger = logging.getLogger(__name__)

DEFAULT_CLUSTERS = 5
PCA_COMPONENTS = 3

LUT_ANCHORS = [(0.000, (68, 1, 84)), (0.125, (71, 44, 122)), (0.250, (59, 82, 139)),
               (0.375, (44, 113, 142)), (0.500, (33, 145, 140)), (0.625, (39, 173, 129)),
               (0.750, (92, 200, 99)), (0.875, (170, 220, 50)), (1.000, (253, 231, 37))]


def _build_lut():
    positions = np.array([anchor[0] for anchor in LUT_ANCHORS])
    colours = np.array([anchor[1] for anchor in LUT_ANCHORS], dtype=np.float64)
    grid = np.arange(256) / 255.
    table = np.stack([np.interp(grid, positions, colours[:, c]) for c in range(3)], axis=1)
    return np.rint(table).astype(np.uint8)


HEATMAP_LUT = _build_lut()

# categorical colours of the cluster panels
CLUSTER_PALETTE = np.array([(31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
                            (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
                            (188, 189, 34), (23, 190, 207)], dtype=np.uint8)


def average_attention(records, layer_id=None, mode=None):
    """
    Mean attention map (N^2, N^2) of the records of one layer (and mode, if
    given), accumulated in float64 in list order.
    """
    selected = [rec for rec in records if (layer_id is None or rec.layer_id == layer_id) and
                (mode is None or rec.mode == mode)]
    if len(selected) == 0:
        raise ValueError('Error in average_attention: no records for layer ' + str(layer_id) +
                         ('' if mode is None else ', mode ' + mode))
    layers = set(rec.layer_id for rec in selected)
    if len(layers) > 1:
        raise ValueError('Error in average_attention: records mix layers ' + ', '.join(sorted(layers)))
    shape = selected[0].attention.shape
    total = torch.zeros(shape, dtype=torch.float64)
    for rec in selected:
        if rec.attention.shape != shape:
            raise DimensionError('Error in average_attention: records mix resolutions')
        total += rec.attention.to(torch.float64)
    return (total / len(selected)).to(selected[0].attention.dtype)


def token_clusters(average, k=DEFAULT_CLUSTERS, rng=None):
    """
    Cluster labels (N^2,) of the tokens: rows of average projected on their
    top principal directions, then k-means.
    """
    if k < 2:
        raise ValueError('Error in token_clusters: need k >= 2, got ' + str(k))
    rng = make_rng(0) if rng is None else rng
    components = min(PCA_COMPONENTS, average.shape[0], average.shape[1])
    return kmeans(pca_top(average, components), k, rng)


def cluster_grid(labels):
    """Labels (N^2,) as an (N, N) grid"""
    n = int(round(labels.numel() ** 0.5))
    if n * n != labels.numel():
        raise DimensionError('Error in cluster_grid: ' + str(labels.numel()) + ' labels do not form a square')
    return labels.reshape(n, n)


def top1_heatmap(record):
    """
    Right singular vector of the top component of record.attention, as an
    (N, N) grid min-max normalized to [0, 1] (all zeros if constant).
    """
    _, _, v = svd_top1(record.attention.to(torch.float64))
    low, high = float(v.min()), float(v.max())
    n = record.resolution()
    if high - low <= 1.e-12 * max(1., abs(high)):
        return torch.zeros(n, n, dtype=torch.float64)
    return ((v - low) / (high - low)).reshape(n, n)


def heatmap_colours(grid):
    """uint8 (N, N, 3) colours of a grid with values in [0, 1]"""
    values = grid.detach().to(torch.float64).cpu().numpy()
    if values.ndim != 2:
        raise DimensionError('Error in export_heatmap: grid must be two dimensional')
    if not np.isfinite(values).all() or values.min() < 0. or values.max() > 1.:
        raise ValueError('Error in export_heatmap: grid values must lie in [0, 1]')
    return HEATMAP_LUT[np.floor(values * 255. + 0.5).astype(np.int64)]


def _save_rgb(colours, filename, zoom):
    if zoom > 1:
        colours = np.repeat(np.repeat(colours, zoom, axis=0), zoom, axis=1)
    path = Path(filename).resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(colours), 'RGB').save(path, format='PNG')
    return path


def export_heatmap(grid, filename, zoom=1):
    """Write grid (values in [0, 1]) as an RGB PNG through HEATMAP_LUT; each cell zoom x zoom pixels"""
    return _save_rgb(heatmap_colours(grid), filename, zoom)


def export_clusters(labels, filename, zoom=1):
    """Write a label grid (N, N) (or flat labels) as an RGB PNG with CLUSTER_PALETTE"""
    grid = labels if labels.dim() == 2 else cluster_grid(labels)
    values = grid.detach().cpu().numpy().astype(np.int64)
    return _save_rgb(CLUSTER_PALETTE[values % len(CLUSTER_PALETTE)], filename, zoom)


def figure_path(directory, run, layer_id, timestep, mode):
    return Path(directory) / run / layer_id / (str(timestep) + '_' + mode + '.png')


def export_trace_figures(records, directory, run='run', k=DEFAULT_CLUSTERS, zoom=8, rng=None):
    """
    Per record top-1 heatmaps at figure_path, and for every (layer, mode) a
    cluster panel of the time-averaged map at {run}/{layer}/average_{mode}_clusters.png.
    Returns the list of paths written.
    """
    rng = make_rng(0) if rng is None else rng
    written = []
    groups = []
    for rec in records:
        written.append(export_heatmap(top1_heatmap(rec), figure_path(directory, run, rec.layer_id,
                                                                      rec.timestep, rec.mode), zoom))
        if (rec.layer_id, rec.mode) not in groups:
            groups.append((rec.layer_id, rec.mode))
    for layer_id, mode in groups:
        average = average_attention(records, layer_id, mode)
        n_tokens = average.shape[0]
        if n_tokens < 2:
            continue
        labels = token_clusters(average, min(k, n_tokens), rng)
        path = Path(directory) / run / layer_id / ('average_' + mode + '_clusters.png')
        written.append(export_clusters(labels, path, zoom))
    logger.info('wrote %d figures under %s', len(written), Path(directory) / run)
    return written
