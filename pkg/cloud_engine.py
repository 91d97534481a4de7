"""
Reachability cloud engine

Samples the activation space of a design, integrates every sample to its
end-effector and stores the resulting cloud. Sample k is drawn from a Philox
stream positioned at a counter derived from k alone, and chunks have a fixed
size, so clouds do not depend on the number of workers.
"""

import logging
import math
import time
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from matplotlib import colormaps
from scipy.spatial.distance import cdist

from config import get_config
from exceptions import CloudFormatError, ParameterError
from filament_model import FieldTable, require_valid
from models import ManipulatorDesign, ReachCloud, SamplerConfig
from ply_io import read_cloud_ply, write_cloud_ply
from rod_kinematics import bending_curvature_array, build_field_table, check_steps, integrate_batch

logger = logging.getLogger(__name__)

# Philox emits four 64-bit words per counter increment
_WORDS_PER_BLOCK = 4


# ============================================================================
# SAMPLING
# ============================================================================

def check_sampler(sampler: SamplerConfig):
    """Raise ParameterError for an invalid sampler"""
    if int(sampler.n_samples) != sampler.n_samples or sampler.n_samples < 1:
        raise ParameterError(f'n_samples must be an integer >= 1, got {sampler.n_samples}')
    if not sampler.gamma_min <= sampler.gamma_max:
        raise ParameterError(f'gamma_min must not exceed gamma_max '
                             f'(got {sampler.gamma_min} > {sampler.gamma_max})')
    if not 0 <= sampler.seed < 2 ** 64:
        raise ParameterError(f'seed must be a 64-bit unsigned integer, got {sampler.seed}')
    check_steps(sampler.steps)


def _blocks_per_sample(n_bundles: int) -> int:
    return max(1, math.ceil(n_bundles / _WORDS_PER_BLOCK))


def sample_activations(design: ManipulatorDesign, sampler: SamplerConfig,
                       start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """
    Activation vectors for sample indices [start, stop)

    Each sample owns a disjoint run of Philox counters, so any index range
    reproduces exactly the same vectors.

    Returns:
        ndarray: (stop - start, B) float64, uniform on [gamma_min, gamma_max]
    """
    stop = sampler.n_samples if stop is None else stop
    if not 0 <= start <= stop:
        raise ParameterError(f'invalid sample range [{start}, {stop})')

    n_bundles = design.total_bundles
    blocks = _blocks_per_sample(n_bundles)
    count = stop - start
    bit_generator = np.random.Philox(key=int(sampler.seed), counter=start * blocks)
    uniforms = np.random.Generator(bit_generator).random(count * blocks * _WORDS_PER_BLOCK)
    uniforms = uniforms.reshape(count, blocks * _WORDS_PER_BLOCK)[:, :n_bundles]
    return sampler.gamma_min + (sampler.gamma_max - sampler.gamma_min) * uniforms


def sample_activation(design: ManipulatorDesign, sampler: SamplerConfig, k: int) -> np.ndarray:
    """Activation vector of sample k"""
    return sample_activations(design, sampler, k, k + 1)[0]


def activation_stream(design: ManipulatorDesign, sampler: SamplerConfig,
                      chunk_size: Optional[int] = None) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (start index, activations) chunks covering all samples in order"""
    chunk_size = chunk_size or get_config().CHUNK_SIZE
    for start in range(0, sampler.n_samples, chunk_size):
        stop = min(start + chunk_size, sampler.n_samples)
        yield start, sample_activations(design, sampler, start, stop)


def stored_activations(design, sampler, start, stop) -> np.ndarray:
    """Activations at storage precision; clouds integrate exactly these values"""
    return sample_activations(design, sampler, start, stop).astype(np.float32)


# ============================================================================
# COLOUR
# ============================================================================

def color_array(activations: np.ndarray, channel: Optional[int] = None,
                gamma_ref: Optional[float] = None) -> np.ndarray:
    """
    RGB bytes for a batch of activation vectors

    Without a channel the first three bundles drive red, green and blue.
    With a channel, |gamma_channel| is mapped through a matplotlib colormap.
    """
    settings = get_config()
    gamma_ref = gamma_ref or settings.COLOR_GAMMA_REF
    activations = np.atleast_2d(np.asarray(activations, dtype=float))
    n, n_bundles = activations.shape

    if channel is not None:
        if not 0 <= channel < n_bundles:
            raise ParameterError(f'colour channel {channel} outside 0..{n_bundles - 1}')
        level = np.clip(np.abs(activations[:, channel]) / gamma_ref, 0.0, 1.0)
        rgba = colormaps[settings.ACTIVATION_COLORMAP].resampled(256)(level)
        return np.floor(255.0 * rgba[:, :3] + 0.5).astype(np.uint8)

    colors = np.zeros((n, 3), dtype=np.uint8)
    used = min(3, n_bundles)
    scaled = np.floor(255.0 * np.abs(activations[:, :used]) / gamma_ref + 0.5)
    colors[:, :used] = np.clip(scaled, 0, 255).astype(np.uint8)
    return colors


def color_map(activation: Sequence[float], design: Optional[ManipulatorDesign] = None,
              channel: Optional[int] = None) -> Tuple[int, int, int]:
    """RGB triple of a single activation vector (round half up)"""
    if design is not None and len(activation) != design.total_bundles:
        raise ParameterError(f'expected {design.total_bundles} activations, got {len(activation)}')
    return tuple(int(c) for c in color_array(activation, channel=channel)[0])


# ============================================================================
# CLOUD GENERATION
# ============================================================================

def _integrate_chunk(table: FieldTable, design: ManipulatorDesign, sampler: SamplerConfig,
                     start: int, stop: int):
    activations = stored_activations(design, sampler, start, stop)
    positions = integrate_batch(table, activations.astype(np.float64))['positions']
    logger.debug(f'chunk [{start}, {stop}) integrated')
    return positions, activations


def generate_cloud(design: ManipulatorDesign, sampler: SamplerConfig, workers: Optional[int] = None,
                   color_channel: Optional[int] = None) -> ReachCloud:
    """
    Sample activations, integrate them and collect end-effector positions

    Args:
        design: ManipulatorDesign (validated before sampling)
        sampler: SamplerConfig
        workers: joblib worker count; defaults to the configured WORKERS
        color_channel: colour by a single bundle instead of RGB from the first three

    Returns:
        ReachCloud with points in sample order
    """
    settings = get_config()
    require_valid(design)
    check_sampler(sampler)
    workers = workers or settings.WORKERS
    chunk_size = settings.CHUNK_SIZE

    logger.info(f'Generating cloud for {design.name} ({design.digest()[:12]}): '
                f'{sampler.n_samples} samples, {sampler.steps} steps, {workers} workers')
    started = time.perf_counter()

    table = build_field_table(design, sampler.steps)
    bounds = [(s, min(s + chunk_size, sampler.n_samples)) for s in range(0, sampler.n_samples, chunk_size)]
    if workers == 1:
        chunks = [_integrate_chunk(table, design, sampler, s, e) for s, e in bounds]
    else:
        chunks = Parallel(n_jobs=workers)(
            delayed(_integrate_chunk)(table, design, sampler, s, e) for s, e in bounds
        )

    positions = np.concatenate([c[0] for c in chunks], axis=0)
    activations = np.concatenate([c[1] for c in chunks], axis=0)
    colors = color_array(activations, channel=color_channel)
    elapsed = time.perf_counter() - started

    warnings = []
    n_bundles = design.total_bundles
    if color_channel is None and n_bundles != 3:
        message = f'design has {n_bundles} bundles; RGB uses the first {min(3, n_bundles)}'
        warnings.append(message)
        logger.info(message)

    metadata = {
        'tool_version': settings.VERSION,
        'design_name': design.name,
        'length': design.geometry.L,
        'n_bundles': n_bundles,
        'chunk_size': chunk_size,
        'color_mode': 'rgb' if color_channel is None else f'bundle_{color_channel}',
        'color_bundles': list(range(min(3, n_bundles))) if color_channel is None else [color_channel]
    }
    logger.info(f'Cloud of {len(positions)} points generated in {elapsed:.2f}s')
    return ReachCloud(
        positions=positions,
        activations=activations,
        colors=colors,
        design_digest=design.digest(),
        sampler=sampler,
        metadata=metadata,
        warnings=warnings
    )


# ============================================================================
# CURVATURE STATISTICS
# ============================================================================

def curvature_samples(design: ManipulatorDesign, sampler: SamplerConfig,
                      stations: Sequence[float]) -> np.ndarray:
    """kappa * L of every sample at every station, shape (N, len(stations))"""
    require_valid(design)
    check_sampler(sampler)
    L = design.geometry.L
    stations = np.asarray(stations, dtype=float)
    table = FieldTable(design, stations)
    chunk_size = get_config().CHUNK_SIZE

    kappa = np.empty((sampler.n_samples, stations.size))
    for start in range(0, sampler.n_samples, chunk_size):
        stop = min(start + chunk_size, sampler.n_samples)
        gammas = stored_activations(design, sampler, start, stop).astype(np.float64)
        for index in range(stations.size):
            _, u = table.evaluate(gammas, index)
            kappa[start:stop, index] = bending_curvature_array(u) * L
    return kappa


def curvature_statistics(design: ManipulatorDesign, sampler: SamplerConfig,
                         stations: Optional[Sequence[float]] = None,
                         bins: Optional[int] = None) -> Dict[float, Dict[str, object]]:
    """
    Histogram and quantiles of kappa * L at each station

    Args:
        design: ManipulatorDesign
        sampler: SamplerConfig
        stations: Z values; defaults to the distal-half stations 0.5L ... L
        bins: histogram bin count

    Returns:
        dict: station -> {'counts', 'edges', 'quantiles', 'min', 'max', 'mean'}
    """
    settings = get_config()
    L = design.geometry.L
    if stations is None:
        stations = [f * L for f in settings.STATION_FRACTIONS]
    bins = bins or settings.HISTOGRAM_BINS

    kappa = curvature_samples(design, sampler, stations)
    stats = {}
    for index, station in enumerate(stations):
        values = kappa[:, index]
        counts, edges = np.histogram(values, bins=bins, range=(values.min(), values.max()))
        stats[float(station)] = {
            'counts': counts,
            'edges': edges,
            'quantiles': {q: float(np.quantile(values, q)) for q in settings.CURVATURE_QUANTILES},
            'min': float(values.min()),
            'max': float(values.max()),
            'mean': float(values.mean())
        }
    logger.info(f'Curvature statistics at {len(stations)} stations from {sampler.n_samples} samples')
    return stats


def curvature_frame(stats: Dict[float, Dict[str, object]]) -> pd.DataFrame:
    """Long-format histogram table: station, bin_lo, bin_hi, count"""
    rows = []
    for station, entry in stats.items():
        edges = entry['edges']
        for i, count in enumerate(entry['counts']):
            rows.append({'station': station, 'bin_lo': edges[i], 'bin_hi': edges[i + 1], 'count': int(count)})
    return pd.DataFrame(rows, columns=['station', 'bin_lo', 'bin_hi', 'count'])


def quantile_frame(stats: Dict[float, Dict[str, object]]) -> pd.DataFrame:
    """One row per station with min, mean, max and the configured quantiles"""
    rows = []
    for station, entry in stats.items():
        row = {'station': station, 'min': entry['min'], 'mean': entry['mean'], 'max': entry['max']}
        row.update({f'q{int(round(100 * q)):02d}': v for q, v in entry['quantiles'].items()})
        rows.append(row)
    return pd.DataFrame(rows)


# ============================================================================
# PERSISTENCE
# ============================================================================

def write_cloud(cloud: ReachCloud, path) -> None:
    """Store a cloud as binary PLY with digest, sampler and metadata in the header"""
    header = {
        'reachcloud_version': get_config().VERSION,
        'design_digest': cloud.design_digest,
        'sampler': cloud.sampler.to_dict(),
        'metadata': cloud.metadata,
        'warnings': list(cloud.warnings)
    }
    write_cloud_ply(path, cloud.positions, cloud.colors, cloud.activations, header)
    logger.info(f'Cloud with {len(cloud)} points written to {path}')


def read_cloud(path, expected_digest: Optional[str] = None) -> ReachCloud:
    """
    Load a cloud written by write_cloud

    A design digest differing from expected_digest is reported as a warning
    on the returned cloud.
    """
    positions, colors, activations, header = read_cloud_ply(path)
    try:
        sampler = SamplerConfig(**header['sampler'])
        digest = header['design_digest']
    except (KeyError, TypeError) as e:
        raise CloudFormatError(f'cloud header lacks sampler or digest: {e}', offset=0)

    warnings = list(header.get('warnings', []))
    if expected_digest is not None and digest != expected_digest:
        message = f'design digest mismatch: file {digest[:12]}, expected {expected_digest[:12]}'
        logger.warning(message)
        warnings.append(message)

    cloud = ReachCloud(
        positions=positions,
        activations=activations,
        colors=colors,
        design_digest=digest,
        sampler=sampler,
        metadata=dict(header.get('metadata', {})),
        warnings=warnings
    )
    logger.info(f'Cloud with {len(cloud)} points read from {path}')
    return cloud


def export_cloud_csv(cloud: ReachCloud, path) -> None:
    """Columns x, y, z, gamma_0 ... gamma_{B-1}"""
    frame = pd.DataFrame(cloud.positions, columns=['x', 'y', 'z'])
    for b in range(cloud.activations.shape[1]):
        frame[f'gamma_{b}'] = cloud.activations[:, b]
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.info(f'Cloud CSV written to {path}')


# ============================================================================
# SYMMETRY AND SLICES
# ============================================================================

def _energy_statistic(dist: np.ndarray, in_first: np.ndarray) -> float:
    a, b = in_first, ~in_first
    return 2.0 * dist[np.ix_(a, b)].mean() - dist[np.ix_(a, a)].mean() - dist[np.ix_(b, b)].mean()


def reflect_cloud_test(cloud, max_points: Optional[int] = None, permutations: Optional[int] = None,
                       seed: int = 0, significance: Optional[float] = None) -> Dict[str, object]:
    """
    Energy-distance permutation test of symmetry about the plane x = 0

    A seeded subsample is split in two halves; the second half is mirrored
    (x -> -x) and compared with the first. Symmetric clouds give
    indistinguishable samples.

    Args:
        cloud: ReachCloud or (N, 3) positions
        max_points: subsample size
        permutations: label permutations for the p-value
        seed: subsample and permutation seed
        significance: level at which symmetry is rejected

    Returns:
        dict: statistic, p_value, passed, n_points
    """
    settings = get_config()
    max_points = max_points or settings.SYMMETRY_TEST_POINTS
    permutations = permutations or settings.SYMMETRY_TEST_PERMUTATIONS
    significance = significance or settings.SYMMETRY_SIGNIFICANCE

    positions = cloud.positions if isinstance(cloud, ReachCloud) else np.asarray(cloud, dtype=float)
    rng = np.random.default_rng(seed)
    n = min(len(positions), max_points)
    chosen = rng.permutation(len(positions))[:n]
    half = n // 2
    first = positions[chosen[:half]]
    mirrored = positions[chosen[half:2 * half]] * np.array([-1.0, 1.0, 1.0])

    pooled = np.concatenate([first, mirrored], axis=0)
    dist = cdist(pooled, pooled)
    labels = np.zeros(2 * half, dtype=bool)
    labels[:half] = True
    observed = _energy_statistic(dist, labels)

    exceed = 0
    for _ in range(permutations):
        if _energy_statistic(dist, rng.permutation(labels)) >= observed:
            exceed += 1
    p_value = (exceed + 1) / (permutations + 1)
    result = {
        'statistic': float(observed),
        'p_value': float(p_value),
        'passed': bool(p_value >= significance),
        'n_points': int(2 * half)
    }
    logger.info(f'Reflection test: energy {observed:.3e}, p={p_value:.3f}')
    return result


def cloud_slices(cloud: ReachCloud, plane: str = 'xz', thickness: Optional[float] = None) -> Dict[str, object]:
    """
    Points of a slab through the origin

    Args:
        cloud: ReachCloud
        plane: 'xz' (slab around y = 0) or 'yz' (slab around x = 0, the symmetry plane)
        thickness: slab thickness; defaults to twice the redundancy radius

    Returns:
        dict: mask, coords (in-plane coordinates), colors
    """
    axes = {'xz': (1, (0, 2)), 'yz': (0, (1, 2))}
    if plane not in axes:
        raise ParameterError(f"plane must be 'xz' or 'yz', got {plane!r}")
    thickness = thickness or 2.0 * get_config().REDUNDANCY_RADIUS
    normal, in_plane = axes[plane]
    mask = np.abs(cloud.positions[:, normal]) <= 0.5 * thickness
    return {
        'mask': mask,
        'coords': cloud.positions[mask][:, list(in_plane)],
        'colors': cloud.colors[mask]
    }
