"""
Omega x phi design sweeps

Each atlas cell is one design from the sweep template: the tapering angle is
set to phi and every helical architecture gets the helical angle that turns
its fiber by Omega over the length, with the template's handedness. A cell
generates its cloud, computes hull metrics and is cached under the pair of
design and sampler digests, so an interrupted sweep resumes where it stopped.
"""

import json
import logging
import math
import os
import shutil
import tempfile
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import ConstantInputWarning, spearmanr

from cloud_engine import curvature_statistics, generate_cloud, quantile_frame, write_cloud
from config import get_config
from design_presets import minimal_design
from exceptions import DesignValidationError, ExportError, ParameterError
from filament_model import helical_angle_from_revolution, require_valid, validate_design
from hull_metrics import analyze_cloud, export_mesh
from manifest import canonical_json_bytes, new_manifest, write_manifest
from models import HullResult, ManipulatorDesign, ReachCloud, SamplerConfig

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['omega_deg', 'phi_deg', 'v_norm', 'unr', 'alpha_used', 'n_points']


# ============================================================================
# SWEEP GRID
# ============================================================================

def _handedness(design: ManipulatorDesign) -> Tuple[int, ...]:
    return tuple(int(np.sign(a.alpha)) for a in design.architectures)


@dataclass
class AtlasSpec:
    """
    Sweep grids (radians) over a design template

    handedness gives -1, 0 or +1 per architecture: 0 keeps the fiber
    longitudinal, +/-1 makes it a right/left-handed helix. It is read from the
    template's helical angles when omitted, so the template should be built
    with a nonzero revolution.
    """
    omega_values: np.ndarray
    phi_values: np.ndarray
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    base_design: ManipulatorDesign = field(default_factory=lambda: minimal_design(omega_deg=108.0))
    handedness: Optional[Tuple[int, ...]] = None
    retain_outputs: bool = False

    def __post_init__(self):
        self.omega_values = np.asarray(self.omega_values, dtype=float)
        self.phi_values = np.asarray(self.phi_values, dtype=float)
        if self.handedness is None:
            self.handedness = _handedness(self.base_design)
        self.handedness = tuple(int(h) for h in self.handedness)

    @classmethod
    def uniform(cls, n_omega: int, n_phi: int, omega_max_deg: Optional[float] = None,
                phi_max_deg: Optional[float] = None, **kwargs) -> 'AtlasSpec':
        """Endpoint-inclusive uniform grids starting at zero"""
        settings = get_config()
        omega_max_deg = settings.ATLAS_OMEGA_MAX_DEG if omega_max_deg is None else omega_max_deg
        phi_max_deg = settings.ATLAS_PHI_MAX_DEG if phi_max_deg is None else phi_max_deg
        if n_omega < 1 or n_phi < 1:
            raise ParameterError(f'grid sizes must be >= 1, got {n_omega} x {n_phi}')
        return cls(
            omega_values=np.radians(np.linspace(0.0, omega_max_deg, n_omega)),
            phi_values=np.radians(np.linspace(0.0, phi_max_deg, n_phi)),
            **kwargs
        )

    @classmethod
    def desk(cls, seed: Optional[int] = None, **kwargs) -> 'AtlasSpec':
        """Reduced-fidelity sweep for desktop acceptance runs"""
        settings = get_config()
        sampler = SamplerConfig(n_samples=settings.ATLAS_DESK_SAMPLES,
                                seed=settings.DEFAULT_SEED if seed is None else seed,
                                steps=settings.DEFAULT_STEPS)
        return cls.uniform(settings.ATLAS_DESK_GRID, settings.ATLAS_DESK_GRID, sampler=sampler, **kwargs)

    @classmethod
    def full(cls, seed: Optional[int] = None, **kwargs) -> 'AtlasSpec':
        """Full-resolution sweep; a long run"""
        settings = get_config()
        sampler = SamplerConfig(n_samples=settings.DEFAULT_SAMPLES,
                                seed=settings.DEFAULT_SEED if seed is None else seed,
                                steps=settings.DEFAULT_STEPS)
        return cls.uniform(settings.ATLAS_FULL_GRID, settings.ATLAS_FULL_GRID, sampler=sampler, **kwargs)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.omega_values.size, self.phi_values.size

    def cell_design(self, i: int, j: int) -> ManipulatorDesign:
        """Design of cell (i, j): omega_values[i], phi_values[j]"""
        base = self.base_design
        geometry = replace(base.geometry, phi=float(self.phi_values[j]))
        magnitude = helical_angle_from_revolution(geometry, float(self.omega_values[i]))
        architectures = tuple(
            replace(arch, alpha=hand * magnitude if hand else 0.0)
            for arch, hand in zip(base.architectures, self.handedness)
        )
        name = f'{base.name}_omega{math.degrees(self.omega_values[i]):g}_phi{math.degrees(self.phi_values[j]):g}'
        return ManipulatorDesign(geometry=geometry, nu=base.nu, architectures=architectures, name=name)

    def validate(self) -> List[str]:
        """Violation messages for the grids and every cell design"""
        violations = []
        for label, values in (('omega_values', self.omega_values), ('phi_values', self.phi_values)):
            if values.size == 0:
                violations.append(f'{label}: must be nonempty')
            elif np.any(np.diff(values) <= 0):
                violations.append(f'{label}: must be strictly increasing')
        if len(self.handedness) != len(self.base_design.architectures):
            violations.append(f'handedness: expected {len(self.base_design.architectures)} entries '
                              f'(got {len(self.handedness)})')
        if violations:
            return violations

        n_omega, n_phi = self.shape
        for i in range(n_omega):
            for j in range(n_phi):
                try:
                    messages = validate_design(self.cell_design(i, j))
                except DesignValidationError as e:
                    messages = e.violations
                for message in messages:
                    violations.append(f'cell ({i}, {j}): {message}')
        return violations

    def to_dict(self):
        return {
            'omega_deg': [float(v) for v in np.degrees(self.omega_values)],
            'phi_deg': [float(v) for v in np.degrees(self.phi_values)],
            'sampler': self.sampler.to_dict(),
            'base_design': self.base_design.to_dict(),
            'handedness': list(self.handedness),
            'retain_outputs': self.retain_outputs
        }


@dataclass
class AtlasCell:
    """Metrics of one (omega, phi) cell; error is set when the cell failed"""
    i: int
    j: int
    omega: float
    phi: float
    metrics: Dict[str, object] = field(default_factory=dict)
    runtime: float = 0.0
    error: Optional[str] = None
    cached: bool = False
    hull: Optional[HullResult] = None
    cloud: Optional[ReachCloud] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def n_points(self) -> int:
        return int(self.metrics.get('n_points', 0))

    def value(self, key: str) -> float:
        if not self.ok or key not in self.metrics:
            return float('nan')
        return float(self.metrics[key])

    def to_dict(self):
        record = {
            'i': self.i,
            'j': self.j,
            'omega_deg': math.degrees(self.omega),
            'phi_deg': math.degrees(self.phi)
        }
        if self.ok:
            record.update(self.metrics)
        else:
            record['error'] = self.error
        return record


@dataclass
class AtlasResult:
    spec: AtlasSpec
    cells: List[AtlasCell]
    wall_clock: float = 0.0

    def cell(self, i: int, j: int) -> AtlasCell:
        return self.cells[i * self.spec.phi_values.size + j]

    @property
    def failed(self) -> List[AtlasCell]:
        return [c for c in self.cells if not c.ok]

    def grid(self, key: str) -> np.ndarray:
        """(n_omega, n_phi) array of one metric, NaN at failed cells"""
        n_omega, n_phi = self.spec.shape
        values = np.full((n_omega, n_phi), np.nan)
        for c in self.cells:
            values[c.i, c.j] = c.value(key)
        return values

    def to_frame(self) -> pd.DataFrame:
        """One row per cell in (omega, phi) order with the contour columns"""
        rows = []
        for c in sorted(self.cells, key=lambda c: (c.i, c.j)):
            rows.append({
                'omega_deg': math.degrees(c.omega),
                'phi_deg': math.degrees(c.phi),
                'v_norm': c.value('v_norm'),
                'unr': c.value('unr'),
                'alpha_used': c.value('alpha_used'),
                'n_points': c.n_points if c.ok else 0
            })
        return pd.DataFrame(rows, columns=CSV_COLUMNS)


# ============================================================================
# EXECUTION
# ============================================================================

def _cache_file(cache_dir, design: ManipulatorDesign, sampler: SamplerConfig) -> Path:
    return Path(cache_dir) / f'{design.digest()[:24]}_{sampler.digest()[:16]}.json'


def cell_metrics(design: ManipulatorDesign, sampler: SamplerConfig, hull: HullResult,
                 n_points: int) -> Dict[str, object]:
    L = design.geometry.L
    metrics = hull.to_dict()
    metrics.update({
        'v_norm': hull.v_concave / L ** 3,
        'v_convex_norm': hull.v_convex / L ** 3,
        'n_points': int(n_points),
        'design_digest': design.digest(),
        'sampler_digest': sampler.digest(),
        'helical_alpha_deg': [math.degrees(a.alpha) for a in design.architectures]
    })
    return metrics


def run_cell(spec: AtlasSpec, i: int, j: int, cache_dir=None, workers: Optional[int] = None) -> AtlasCell:
    """
    Evaluate one atlas cell standalone

    Args:
        spec: AtlasSpec
        i: omega index
        j: phi index
        cache_dir: directory of cached cell metrics; no caching when None
        workers: cloud-generation workers for this cell

    Returns:
        AtlasCell (raises on failure)
    """
    design = spec.cell_design(i, j)
    require_valid(design)
    cell = AtlasCell(i=i, j=j, omega=float(spec.omega_values[i]), phi=float(spec.phi_values[j]))
    started = time.perf_counter()

    cache_file = _cache_file(cache_dir, design, spec.sampler) if cache_dir is not None else None
    if cache_file is not None and cache_file.exists() and not spec.retain_outputs:
        cell.metrics = json.loads(cache_file.read_text())
        cell.cached = True
        logger.debug(f'cell ({i}, {j}) restored from {cache_file}')
        return cell

    cloud = generate_cloud(design, spec.sampler, workers=workers or 1)
    hull = analyze_cloud(cloud.positions)
    cell.metrics = cell_metrics(design, spec.sampler, hull, len(cloud))
    cell.runtime = time.perf_counter() - started
    if spec.retain_outputs:
        cell.hull, cell.cloud = hull, cloud

    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        cache_file.write_bytes(canonical_json_bytes(cell.metrics))
    logger.info(f'Atlas cell ({i}, {j}) Omega={math.degrees(cell.omega):.1f} deg, '
                f'phi={math.degrees(cell.phi):.2f} deg: V/L^3={cell.metrics["v_norm"]:.4f}, '
                f'UNR={cell.metrics["unr"]:.4f} in {cell.runtime:.1f}s')
    return cell


def _safe_cell(spec: AtlasSpec, i: int, j: int, cache_dir, workers: int) -> AtlasCell:
    try:
        return run_cell(spec, i, j, cache_dir=cache_dir, workers=workers)
    except Exception as e:
        logger.error(f'Atlas cell ({i}, {j}) failed: {type(e).__name__}: {e}')
        return AtlasCell(i=i, j=j, omega=float(spec.omega_values[i]), phi=float(spec.phi_values[j]),
                         error=f'{type(e).__name__}: {e}')


def run_atlas(spec: AtlasSpec, workers: Optional[int] = None, cache_dir=None,
              use_cache: bool = True) -> AtlasResult:
    """
    Run every cell of the sweep; failed cells are recorded and the sweep continues

    Cells run concurrently when workers > 1; otherwise the cloud generation
    inside each cell gets the workers.
    """
    settings = get_config()
    violations = spec.validate()
    if violations:
        raise ParameterError('invalid atlas: ' + '; '.join(violations))

    workers = workers or settings.WORKERS
    if use_cache and cache_dir is None:
        cache_dir = Path(settings.CACHE_DIR) / 'atlas'
    if not use_cache:
        cache_dir = None

    n_omega, n_phi = spec.shape
    coordinates = [(i, j) for i in range(n_omega) for j in range(n_phi)]
    logger.info(f'Running atlas {n_omega}x{n_phi} with {spec.sampler.n_samples} samples per cell, '
                f'{workers} workers')
    started = time.perf_counter()

    if workers == 1:
        cells = [_safe_cell(spec, i, j, cache_dir, 1) for i, j in coordinates]
    elif len(coordinates) == 1:
        cells = [_safe_cell(spec, 0, 0, cache_dir, workers)]
    else:
        cells = Parallel(n_jobs=workers)(
            delayed(_safe_cell)(spec, i, j, cache_dir, 1) for i, j in coordinates
        )

    result = AtlasResult(spec=spec, cells=sorted(cells, key=lambda c: (c.i, c.j)),
                         wall_clock=time.perf_counter() - started)
    if result.failed:
        labels = ', '.join(f'({c.i}, {c.j})' for c in result.failed)
        logger.warning(f'{len(result.failed)} atlas cells failed: {labels}')
    logger.info(f'Atlas finished in {result.wall_clock:.1f}s '
                f'({sum(c.cached for c in cells)} cells from cache)')
    return result


# ============================================================================
# ANALYSIS
# ============================================================================

def find_volume_optimum(result: AtlasResult) -> Tuple[float, float, float]:
    """
    Cell with the largest normalised concave volume

    Ties go to the smaller phi, then the smaller omega.

    Returns:
        tuple: (phi_star, omega_star, v_norm) with angles in radians
    """
    best = None
    for c in sorted(result.cells, key=lambda c: (c.phi, c.omega)):
        v = c.value('v_norm')
        if np.isnan(v):
            continue
        if best is None or v > best[2]:
            best = (c.phi, c.omega, v)
    if best is None:
        raise ParameterError('atlas has no successful cells')
    logger.info(f'Volume optimum: phi*={math.degrees(best[0]):.3g} deg, '
                f'Omega*={math.degrees(best[1]):.3g} deg, V/L^3={best[2]:.4f}')
    return best


def _rank_correlation(x: np.ndarray, y: np.ndarray) -> Tuple[float, bool]:
    """Spearman rho over finite entries; (0, True) when undefined"""
    keep = np.isfinite(y)
    if keep.sum() < 2:
        return 0.0, True
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConstantInputWarning)
        rho, _ = spearmanr(x[keep], y[keep])
    if np.isnan(rho):
        return 0.0, True
    return float(rho), False


def trend_statistics(result: AtlasResult, key: str = 'unr') -> Dict[str, object]:
    """
    Rank correlation of a metric with omega along every fixed-phi row and with
    phi along every fixed-omega column

    Returns:
        dict: per-row/column correlations, inconclusive flags and the fraction
        of rows and columns with negative correlation
    """
    n_omega, n_phi = result.spec.shape
    if n_omega < 2 or n_phi < 2:
        raise ParameterError(f'trend statistics need at least a 2x2 grid, got {n_omega}x{n_phi}')
    values = result.grid(key)
    omega, phi = result.spec.omega_values, result.spec.phi_values

    rows = [_rank_correlation(omega, values[:, j]) for j in range(n_phi)]
    columns = [_rank_correlation(phi, values[i, :]) for i in range(n_omega)]

    report = {
        'metric': key,
        'vs_omega': [rho for rho, _ in rows],
        'vs_phi': [rho for rho, _ in columns],
        'vs_omega_inconclusive': [flag for _, flag in rows],
        'vs_phi_inconclusive': [flag for _, flag in columns],
        'fraction_negative_rows': float(np.mean([rho < 0 for rho, _ in rows])),
        'fraction_negative_columns': float(np.mean([rho < 0 for rho, _ in columns]))
    }
    report['inconclusive'] = any(report['vs_omega_inconclusive']) or any(report['vs_phi_inconclusive'])
    logger.info(f'{key} trend: {report["fraction_negative_rows"]:.0%} of rows and '
                f'{report["fraction_negative_columns"]:.0%} of columns decreasing')
    return report


def curvature_comparison(spec: AtlasSpec, omega: float, phi_a: float, phi_b: float,
                         stations: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """
    Curvature quantiles of two tapering angles at the same revolution

    Returns:
        DataFrame of quantile rows for each station, with a phi_deg column
    """
    frames = []
    for phi in (phi_a, phi_b):
        single = AtlasSpec(omega_values=[omega], phi_values=[phi], sampler=spec.sampler,
                           base_design=spec.base_design, handedness=spec.handedness)
        design = single.cell_design(0, 0)
        frame = quantile_frame(curvature_statistics(design, spec.sampler, stations=stations))
        frame.insert(0, 'phi_deg', math.degrees(phi))
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


# ============================================================================
# EXPORT
# ============================================================================

def atlas_csv_bytes(result: AtlasResult) -> bytes:
    text = result.to_frame().to_csv(index=False, float_format='%.17g', lineterminator='\n')
    return text.encode('utf-8')


def _write_tree(result: AtlasResult, root: Path) -> List[Path]:
    written = []
    csv_path = root / 'atlas.csv'
    csv_path.write_bytes(atlas_csv_bytes(result))
    written.append(csv_path)

    for c in result.cells:
        cell_dir = root / 'cells' / f'omega_{c.i}_phi_{c.j}'
        cell_dir.mkdir(parents=True)
        metrics_path = cell_dir / 'metrics.json'
        metrics_path.write_bytes(canonical_json_bytes(c.to_dict()))
        written.append(metrics_path)
        if c.cloud is not None:
            write_cloud(c.cloud, cell_dir / 'cloud.ply')
            written.append(cell_dir / 'cloud.ply')
        if c.hull is not None:
            export_mesh(c.hull.concave_mesh, cell_dir / 'hull.ply')
            written.append(cell_dir / 'hull.ply')
    return written


def _is_previous_export(directory: Path) -> bool:
    names = {p.name for p in directory.iterdir()}
    return not names or names <= {'atlas.csv', 'manifest.json', 'cells'}


def export_atlas(result: AtlasResult, directory) -> Path:
    """
    Write atlas.csv, cells/omega_<i>_phi_<j>/metrics.json (plus retained
    cloud.ply and hull.ply) and manifest.json

    The tree is assembled next to the target and moved into place only when
    complete, so a failure leaves no partial output. An existing earlier
    export at the target is replaced.
    """
    target = Path(directory)
    if target.exists() and not (target.is_dir() and _is_previous_export(target)):
        raise ExportError(f'{target} exists and is not an atlas export')

    staging = None
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix='.atlas-', dir=target.parent))
        written = _write_tree(result, staging)

        spec = result.spec
        manifest = new_manifest(
            'atlas',
            design_digest=spec.base_design.digest(),
            design=spec.base_design.to_dict(),
            sampler=spec.sampler.to_dict(),
            seeds={'sampler': int(spec.sampler.seed)},
            parameters=spec.to_dict(),
            wall_clock=result.wall_clock
        )
        manifest.parameters['failed_cells'] = [[c.i, c.j] for c in result.failed]
        write_manifest(manifest, staging, written)

        if target.exists():
            shutil.rmtree(target)
        os.replace(staging, target)
        staging = None
    except OSError as e:
        raise ExportError(f'cannot export atlas to {target}: {e}')
    finally:
        if staging is not None:
            shutil.rmtree(staging, ignore_errors=True)

    logger.info(f'Atlas with {len(result.cells)} cells exported to {target}')
    return target
