"""
Activation redundancy of reachability clouds

For a cloud point p_i with activation Gamma_i, the mean activation-space
distance over the sphere of radius r_s is

    D(p_i, r_s) = sum_j |Gamma_j - Gamma_i| / K

where j runs over the K other cloud points within r_s of p_i. Points without
neighbours are isolated and excluded from every statistic.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from matplotlib import colormaps
from scipy.spatial import cKDTree

from config import get_config
from exceptions import ParameterError
from models import ReachCloud
from ply_io import write_vertex_ply

logger = logging.getLogger(__name__)


class SpatialIndex:
    """Immutable k-d tree over cloud positions for fixed-radius queries"""

    def __init__(self, positions: np.ndarray):
        self.positions = np.array(positions, dtype=float, copy=True)
        self.positions.setflags(write=False)
        self.tree = cKDTree(self.positions)

    def __len__(self):
        return len(self.positions)

    def query(self, point, radius: float) -> np.ndarray:
        """Sorted indices of every point within distance <= radius"""
        if radius < 0:
            raise ParameterError(f'query radius must be nonnegative, got {radius}')
        found = self.tree.query_ball_point(np.asarray(point, dtype=float), r=radius, return_sorted=True)
        return np.asarray(found, dtype=np.int64)

    def query_many(self, points, radius: float):
        """Neighbour index lists for many query points"""
        return self.tree.query_ball_point(np.asarray(points, dtype=float), r=radius, return_sorted=True)


@dataclass
class ActivationDistanceField:
    """Mean activation-space distance on a subset of cloud points"""
    subset_indices: np.ndarray
    d_bar: np.ndarray          # NaN where isolated
    k_neighbors: np.ndarray
    r_s: float

    @property
    def isolated(self) -> np.ndarray:
        return self.k_neighbors == 0

    def summary(self) -> Dict[str, float]:
        """Quantiles of d_bar over non-isolated points"""
        values = self.d_bar[~self.isolated]
        record = {
            'points': int(self.subset_indices.size),
            'isolated': int(self.isolated.sum()),
            'r_s': float(self.r_s)
        }
        if values.size:
            record.update({
                'mean': float(values.mean()),
                'median': float(np.median(values)),
                'q05': float(np.quantile(values, 0.05)),
                'q95': float(np.quantile(values, 0.95)),
                'max': float(values.max())
            })
        return record

    def to_dict(self):
        return self.summary()


def build_index(cloud) -> SpatialIndex:
    """Spatial index over a ReachCloud or an (N, 3) position array"""
    positions = cloud.positions if isinstance(cloud, ReachCloud) else np.asarray(cloud, dtype=float)
    if len(positions) == 0:
        raise ParameterError('cannot index an empty cloud')
    logger.debug(f'spatial index over {len(positions)} points')
    return SpatialIndex(positions)


def _mean_distance(activations: np.ndarray, i: int, neighbours) -> Tuple[float, int]:
    others = [j for j in neighbours if j != i]
    if not others:
        return float('nan'), 0
    diff = activations[others] - activations[i]
    return float(np.sqrt((diff * diff).sum(axis=1)).mean()), len(others)


def mean_activation_distance(cloud: ReachCloud, index: SpatialIndex, i: int, r_s: float) -> Tuple[float, int]:
    """
    Mean activation distance at cloud point i

    Returns:
        tuple: (d_bar, K); d_bar is NaN when K = 0
    """
    if not 0 <= i < len(cloud):
        raise ParameterError(f'point index {i} outside 0..{len(cloud) - 1}')
    if not r_s > 0:
        raise ParameterError(f'r_s must be positive, got {r_s}')
    activations = cloud.activations.astype(np.float64)
    return _mean_distance(activations, i, index.query(cloud.positions[i], r_s))


def _field_batch(index: SpatialIndex, activations: np.ndarray, indices: np.ndarray, r_s: float):
    neighbour_lists = index.query_many(index.positions[indices], r_s)
    d_bar = np.empty(indices.size)
    k = np.empty(indices.size, dtype=np.int64)
    for n, (i, neighbours) in enumerate(zip(indices, neighbour_lists)):
        d_bar[n], k[n] = _mean_distance(activations, int(i), neighbours)
    return d_bar, k


def distance_field(cloud: ReachCloud, subset_size: Optional[int] = None, r_s: Optional[float] = None,
                   seed: Optional[int] = None, index: Optional[SpatialIndex] = None,
                   workers: Optional[int] = None) -> ActivationDistanceField:
    """
    Mean activation-space distance over a seeded subset of the cloud

    Args:
        cloud: ReachCloud
        subset_size: number of points evaluated (whole cloud when larger)
        r_s: sphere radius in units of L
        seed: subset seed
        index: prebuilt SpatialIndex
        workers: joblib workers for the per-point evaluation

    Returns:
        ActivationDistanceField ordered by point index
    """
    settings = get_config()
    subset_size = settings.REDUNDANCY_SUBSET if subset_size is None else subset_size
    r_s = settings.REDUNDANCY_RADIUS if r_s is None else r_s
    seed = settings.REDUNDANCY_SEED if seed is None else seed
    workers = workers or settings.WORKERS
    if not r_s > 0:
        raise ParameterError(f'r_s must be positive, got {r_s}')
    if subset_size < 1:
        raise ParameterError(f'subset size must be >= 1, got {subset_size}')

    n = len(cloud)
    if subset_size >= n:
        subset = np.arange(n)
    else:
        subset = np.sort(np.random.default_rng(seed).choice(n, size=subset_size, replace=False))

    index = index or build_index(cloud)
    activations = cloud.activations.astype(np.float64)
    batches = np.array_split(subset, max(1, int(np.ceil(subset.size / settings.CHUNK_SIZE))))
    if workers == 1:
        parts = [_field_batch(index, activations, b, r_s) for b in batches]
    else:
        parts = Parallel(n_jobs=workers)(delayed(_field_batch)(index, activations, b, r_s) for b in batches)

    field = ActivationDistanceField(
        subset_indices=subset,
        d_bar=np.concatenate([p[0] for p in parts]),
        k_neighbors=np.concatenate([p[1] for p in parts]),
        r_s=float(r_s)
    )
    summary = field.summary()
    logger.info(f'Activation distance field on {summary["points"]} points '
                f'({summary["isolated"]} isolated), r_s={r_s:.5g}')
    return field


def sector_statistics(field: ActivationDistanceField, cloud: ReachCloud, n_sectors: int = 8) -> pd.DataFrame:
    """
    Mean and median d_bar in azimuthal sectors around the base axis

    Sector 0 starts at the +x axis; azimuth grows toward +y.
    """
    if n_sectors < 1:
        raise ParameterError(f'n_sectors must be >= 1, got {n_sectors}')
    points = cloud.positions[field.subset_indices]
    azimuth = np.mod(np.degrees(np.arctan2(points[:, 1], points[:, 0])), 360.0)
    width = 360.0 / n_sectors
    sector = np.minimum((azimuth // width).astype(int), n_sectors - 1)

    rows = []
    for s in range(n_sectors):
        selected = (sector == s) & ~field.isolated
        values = field.d_bar[selected]
        rows.append({
            'sector': s,
            'azimuth_lo': s * width,
            'azimuth_hi': (s + 1) * width,
            'points': int(selected.sum()),
            'mean_d_bar': float(values.mean()) if values.size else float('nan'),
            'median_d_bar': float(np.median(values)) if values.size else float('nan')
        })
    return pd.DataFrame(rows)


def field_colors(field: ActivationDistanceField, vmax: Optional[float] = None) -> np.ndarray:
    """
    RGB bytes of d_bar on the configured 256-entry colormap

    d_bar is scaled by vmax (default: largest non-isolated value); isolated
    points take the isolated colour.
    """
    settings = get_config()
    values = field.d_bar[~field.isolated]
    vmax = vmax or (float(values.max()) if values.size and values.max() > 0 else 1.0)
    table = colormaps[settings.DISTANCE_COLORMAP].resampled(256)
    level = np.clip(np.nan_to_num(field.d_bar / vmax, nan=0.0), 0.0, 1.0)
    slot = np.floor(255.0 * level + 0.5).astype(int)
    colors = np.floor(255.0 * table(np.arange(256))[:, :3] + 0.5).astype(np.uint8)[slot]
    colors[field.isolated] = settings.ISOLATED_COLOR
    return colors


def field_frame(field: ActivationDistanceField, cloud: ReachCloud) -> pd.DataFrame:
    points = cloud.positions[field.subset_indices]
    return pd.DataFrame({
        'index': field.subset_indices,
        'x': points[:, 0],
        'y': points[:, 1],
        'z': points[:, 2],
        'd_bar': field.d_bar,
        'K': field.k_neighbors,
        'isolated': field.isolated
    })


def export_field_csv(field: ActivationDistanceField, cloud: ReachCloud, path) -> None:
    """Columns index, x, y, z, d_bar, K, isolated"""
    field_frame(field, cloud).to_csv(path, index=False, float_format='%.17g')
    logger.info(f'Activation distance field CSV written to {path}')


def export_field_ply(field: ActivationDistanceField, cloud: ReachCloud, path,
                     vmax: Optional[float] = None) -> None:
    """Coloured PLY of the subset with d_bar and K as extra vertex properties"""
    settings = get_config()
    points = cloud.positions[field.subset_indices]
    colors = field_colors(field, vmax)
    data = np.empty(points.shape[0], dtype=[
        ('x', '<f8'), ('y', '<f8'), ('z', '<f8'),
        ('red', 'u1'), ('green', 'u1'), ('blue', 'u1'),
        ('d_bar', '<f8'), ('k', '<i4')
    ])
    data['x'], data['y'], data['z'] = points[:, 0], points[:, 1], points[:, 2]
    data['red'], data['green'], data['blue'] = colors[:, 0], colors[:, 1], colors[:, 2]
    data['d_bar'] = field.d_bar
    data['k'] = field.k_neighbors
    write_vertex_ply(path, data, {
        'colormap': settings.DISTANCE_COLORMAP,
        'isolated_color': list(settings.ISOLATED_COLOR),
        'r_s': field.r_s,
        'design_digest': cloud.design_digest
    })
    logger.info(f'Activation distance field PLY written to {path}')
