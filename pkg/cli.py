"""
Command-line front end

    reachcloud gen --preset minimal --omega 108 --phi 2 --samples 400000 --seed 42 --out cloud.ply
    reachcloud hull --in cloud.ply --out hull/
    reachcloud redundancy --in cloud.ply --radius 0.016667 --subset 10000 --seed 7
    reachcloud atlas --grid desk --out atlas/

Run options (--seed, --samples, --steps, --out, --workers, --format,
--verbose) are accepted by every subcommand. Exit codes: 0 success,
1 usage, 2 validation, 3 I/O, 4 numeric.
"""

import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import List, Optional

import click

from atlas_runner import AtlasSpec, export_atlas, find_volume_optimum, run_atlas, trend_statistics
from cloud_engine import (
    curvature_frame,
    curvature_statistics,
    export_cloud_csv,
    generate_cloud,
    quantile_frame,
    read_cloud,
    write_cloud,
)
from config import get_config
from design_presets import parse_design, preset_design
from exceptions import DesignValidationError, ReachCloudError
from filament_model import design_summary, validate_design
from hull_metrics import analyze_cloud, export_mesh, export_metrics
from manifest import new_manifest, sha256_file, write_manifest, write_sidecar_manifest
from models import ActivationState, ManipulatorDesign, SamplerConfig
from redundancy_analysis import (
    build_index,
    distance_field,
    export_field_csv,
    export_field_ply,
    sector_statistics,
)
from rod_kinematics import convergence_report, export_centerline, integrate

logger = logging.getLogger(__name__)


# ============================================================================
# SHARED OPTIONS
# ============================================================================

def run_options(f):
    """Options every subcommand accepts"""
    options = [
        click.option('--seed', type=int, default=None, help='Sampler or subset seed'),
        click.option('--samples', type=int, default=None, help='Monte-Carlo sample count'),
        click.option('--steps', type=int, default=None, help='Integration steps along the rod'),
        click.option('--out', type=click.Path(), default=None, help='Output file, prefix or directory'),
        click.option('--workers', type=int, default=None, help='Worker processes'),
        click.option('--format', 'fmt', type=click.Choice(['ply', 'csv', 'off']), default=None,
                     help='Output format'),
        click.option('--verbose', '-v', is_flag=True, help='Debug logging'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def design_options(f):
    """Design selection: a preset or a TOML/JSON design file"""
    options = [
        click.option('--preset', type=click.Choice(['minimal', 'redundant']), default=None),
        click.option('--design', 'design_path', type=click.Path(exists=True, dir_okay=False), default=None,
                     help='TOML or JSON design file'),
        click.option('--omega', type=float, default=0.0, help='Fiber revolution in degrees (presets)'),
        click.option('--phi', type=float, default=0.0, help='Tapering angle in degrees (presets)'),
        click.option('--length', type=float, default=1.0, help='Manipulator length L (presets)'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _setup(verbose: bool):
    settings = get_config()
    level = logging.DEBUG if verbose else getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO)
    logging.basicConfig(level=level, format=settings.LOG_FORMAT)
    logging.getLogger().setLevel(level)
    return settings


def _load_design(preset: Optional[str], design_path: Optional[str], omega: float, phi: float,
                 length: float) -> ManipulatorDesign:
    if preset and design_path:
        raise click.UsageError('--preset and --design are mutually exclusive')
    if design_path:
        return parse_design(design_path)
    return preset_design(preset or 'minimal', omega_deg=omega, phi_deg=phi, L=length)


def _sampler(settings, samples: Optional[int], seed: Optional[int], steps: Optional[int]) -> SamplerConfig:
    return SamplerConfig(
        n_samples=settings.DEFAULT_SAMPLES if samples is None else samples,
        gamma_min=settings.GAMMA_MIN,
        gamma_max=settings.GAMMA_MAX,
        seed=settings.DEFAULT_SEED if seed is None else seed,
        steps=settings.DEFAULT_STEPS if steps is None else steps
    )


def _parse_floats(text: str, option: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f'expected comma-separated numbers, got {text!r}', param_hint=option)


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))


# ============================================================================
# COMMANDS
# ============================================================================

@click.group()
@click.version_option(get_config().VERSION, prog_name='reachcloud')
def cli():
    """Reachability clouds of tapered fiber-actuated manipulators"""


@cli.command()
@design_options
@run_options
@click.option('--color-channel', type=int, default=None, help='Colour by the |gamma| of one bundle')
def gen(preset, design_path, omega, phi, length, color_channel, seed, samples, steps, out, workers, fmt, verbose):
    """Generate a reachability cloud"""
    settings = _setup(verbose)
    design = _load_design(preset, design_path, omega, phi, length)
    sampler = _sampler(settings, samples, seed, steps)
    fmt = fmt or (Path(out).suffix.lstrip('.').lower() if out else 'ply') or 'ply'
    if fmt not in ('ply', 'csv'):
        raise click.UsageError(f'gen writes ply or csv, not {fmt}')
    out = Path(out or f'cloud.{fmt}')

    started = time.perf_counter()
    cloud = generate_cloud(design, sampler, workers=workers, color_channel=color_channel)
    if fmt == 'ply':
        write_cloud(cloud, out)
    else:
        export_cloud_csv(cloud, out)

    manifest = new_manifest(
        'gen',
        design_digest=design.digest(),
        design=design.to_dict(),
        sampler=sampler.to_dict(),
        seeds={'sampler': sampler.seed},
        parameters={'omega_deg': omega, 'phi_deg': phi, 'color_channel': color_channel, 'format': fmt},
        wall_clock=time.perf_counter() - started
    )
    write_sidecar_manifest(manifest, [out])
    for warning in cloud.warnings:
        click.echo(f'warning: {warning}', err=True)
    click.echo(f'{len(cloud)} points written to {out}')


@cli.command()
@run_options
@click.option('--in', 'input_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--alpha', type=float, default=None, help='Fixed alpha radius (calibrated when omitted)')
def hull(input_path, alpha, seed, samples, steps, out, workers, fmt, verbose):
    """Concave/convex hull metrics of a cloud file"""
    _setup(verbose)
    fmt = fmt or 'ply'
    if fmt not in ('ply', 'off'):
        raise click.UsageError(f'hull meshes are written as ply or off, not {fmt}')
    out = Path(out or 'hull')
    out.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    cloud = read_cloud(input_path)
    result = analyze_cloud(cloud.positions, alpha=alpha)

    written = [out / 'metrics.json', out / f'concave.{fmt}', out / f'convex.{fmt}']
    export_metrics(result, written[0])
    export_mesh(result.concave_mesh, written[1])
    export_mesh(result.convex_mesh, written[2])

    manifest = new_manifest(
        'hull',
        design_digest=cloud.design_digest,
        sampler=cloud.sampler.to_dict(),
        seeds={'sampler': cloud.sampler.seed},
        parameters={'input': str(input_path), 'input_sha256': sha256_file(input_path), 'alpha': alpha},
        wall_clock=time.perf_counter() - started
    )
    write_manifest(manifest, out, written)
    _echo_json(result.to_dict())


@cli.command()
@run_options
@click.option('--in', 'input_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--radius', type=float, default=None, help='Sphere radius r_s (default L/60)')
@click.option('--subset', type=int, default=None, help='Number of evaluated points')
@click.option('--sectors', type=int, default=8, help='Azimuthal sectors of the regional summary')
def redundancy(input_path, radius, subset, sectors, seed, samples, steps, out, workers, fmt, verbose):
    """Mean activation-space distance field of a cloud file"""
    settings = _setup(verbose)
    cloud = read_cloud(input_path)
    if radius is None:
        radius = settings.REDUNDANCY_RADIUS * float(cloud.metadata.get('length', 1.0))
    if fmt == 'off':
        raise click.UsageError('redundancy writes ply or csv, not off')
    prefix = Path(out or 'redundancy')
    prefix.parent.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    field = distance_field(cloud, subset_size=subset, r_s=radius, seed=seed,
                           index=build_index(cloud), workers=workers)

    written = []
    if fmt in (None, 'csv'):
        written.append(prefix.with_suffix('.csv'))
        export_field_csv(field, cloud, written[-1])
    if fmt in (None, 'ply'):
        written.append(prefix.with_suffix('.ply'))
        export_field_ply(field, cloud, written[-1])
    sectors_path = prefix.with_name(prefix.name + '_sectors.csv')
    sector_statistics(field, cloud, n_sectors=sectors).to_csv(sectors_path, index=False, float_format='%.17g')
    written.append(sectors_path)

    manifest = new_manifest(
        'redundancy',
        design_digest=cloud.design_digest,
        sampler=cloud.sampler.to_dict(),
        seeds={'subset': settings.REDUNDANCY_SEED if seed is None else seed},
        parameters={'input': str(input_path), 'input_sha256': sha256_file(input_path), 'r_s': radius,
                    'subset': subset or settings.REDUNDANCY_SUBSET, 'sectors': sectors},
        wall_clock=time.perf_counter() - started
    )
    write_sidecar_manifest(manifest, written)
    _echo_json(field.summary())


@cli.command()
@design_options
@run_options
@click.option('--stations', default=None, help='Comma-separated stations as fractions of L')
@click.option('--bins', type=int, default=None, help='Histogram bins')
def stats(preset, design_path, omega, phi, length, stations, bins, seed, samples, steps, out, workers,
          fmt, verbose):
    """Curvature histograms and quantiles at distal stations"""
    settings = _setup(verbose)
    design = _load_design(preset, design_path, omega, phi, length)
    sampler = _sampler(settings, samples, seed, steps)
    L = design.geometry.L
    fractions = _parse_floats(stations, '--stations') if stations else settings.STATION_FRACTIONS
    prefix = Path(out or 'curvature')
    prefix.parent.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    result = curvature_statistics(design, sampler, stations=[f * L for f in fractions], bins=bins)
    written = [prefix.with_name(prefix.name + '_histogram.csv'), prefix.with_name(prefix.name + '_quantiles.csv')]
    curvature_frame(result).to_csv(written[0], index=False, float_format='%.17g')
    quantiles = quantile_frame(result)
    quantiles.to_csv(written[1], index=False, float_format='%.17g')

    manifest = new_manifest(
        'stats',
        design_digest=design.digest(),
        design=design.to_dict(),
        sampler=sampler.to_dict(),
        seeds={'sampler': sampler.seed},
        parameters={'station_fractions': list(fractions), 'bins': bins or settings.HISTOGRAM_BINS},
        wall_clock=time.perf_counter() - started
    )
    write_sidecar_manifest(manifest, written)
    click.echo(quantiles.to_string(index=False))


@cli.command()
@design_options
@run_options
@click.option('--gamma', required=True, help='Comma-separated activation per bundle')
def centerline(preset, design_path, omega, phi, length, gamma, seed, samples, steps, out, workers, fmt,
               verbose):
    """Integrate one activation and export its centerline"""
    settings = _setup(verbose)
    design = _load_design(preset, design_path, omega, phi, length)
    act = ActivationState.from_flat(design, _parse_floats(gamma, '--gamma'))
    steps = settings.DEFAULT_STEPS if steps is None else steps
    out = Path(out or 'centerline.csv')

    started = time.perf_counter()
    config = integrate(design, act, steps)
    export_centerline(config, out)
    manifest = new_manifest(
        'centerline',
        design_digest=design.digest(),
        design=design.to_dict(),
        parameters={'gamma': [float(v) for v in act.flat()], 'steps': steps},
        wall_clock=time.perf_counter() - started
    )
    write_sidecar_manifest(manifest, [out])
    tip = config.centerline[-1]
    click.echo(f'r(L) = ({tip[0]:.9g}, {tip[1]:.9g}, {tip[2]:.9g}) written to {out}')


@cli.command()
@design_options
@run_options
def validate(preset, design_path, omega, phi, length, seed, samples, steps, out, workers, fmt, verbose):
    """Check a design against its invariants"""
    _setup(verbose)
    try:
        design = _load_design(preset, design_path, omega, phi, length)
    except DesignValidationError as e:
        _echo_json({'design': design_path, 'violations': e.violations})
        raise
    violations = validate_design(design)
    _echo_json({'design': design.name, 'violations': violations})
    if violations:
        raise DesignValidationError(violations)


@cli.command()
@design_options
@run_options
@click.option('--gamma', required=True, help='Comma-separated activation per bundle')
@click.option('--steps-list', default='25,50,100,200', help='Ascending step counts')
def convergence(preset, design_path, omega, phi, length, gamma, steps_list, seed, samples, steps, out,
                workers, fmt, verbose):
    """End-effector convergence of the integrator"""
    _setup(verbose)
    design = _load_design(preset, design_path, omega, phi, length)
    act = ActivationState.from_flat(design, _parse_floats(gamma, '--gamma'))
    counts = [int(v) for v in _parse_floats(steps_list, '--steps-list')]
    report = convergence_report(design, act, counts)
    if out:
        report.to_csv(out, index=False, float_format='%.17g')
    click.echo(report.to_string(index=False))


@cli.command()
@design_options
@run_options
def summary(preset, design_path, omega, phi, length, seed, samples, steps, out, workers, fmt, verbose):
    """Design summary: helical angles, revolutions and taper ratio"""
    _setup(verbose)
    _echo_json(design_summary(_load_design(preset, design_path, omega, phi, length)))


@cli.command()
@run_options
@click.option('--preset', type=click.Choice(['minimal', 'redundant']), default='minimal', help='Sweep template')
@click.option('--design', 'design_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Sweep template file; helical fibers need a nonzero angle to fix their handedness')
@click.option('--grid', type=click.Choice(['desk', 'full']), default='desk')
@click.option('--n-omega', type=int, default=None)
@click.option('--n-phi', type=int, default=None)
@click.option('--omega-max', type=float, default=None, help='Largest revolution in degrees')
@click.option('--phi-max', type=float, default=None, help='Largest tapering angle in degrees')
@click.option('--retain', is_flag=True, help='Keep per-cell clouds and hulls')
@click.option('--no-cache', is_flag=True, help='Recompute cached cells')
def atlas(preset, design_path, grid, n_omega, n_phi, omega_max, phi_max, retain, no_cache, seed, samples,
          steps, out, workers, fmt, verbose):
    """Omega x phi sweep of hull metrics"""
    settings = _setup(verbose)
    template = parse_design(design_path) if design_path else preset_design(preset, omega_deg=108.0)

    default = settings.ATLAS_DESK_GRID if grid == 'desk' else settings.ATLAS_FULL_GRID
    default_samples = settings.ATLAS_DESK_SAMPLES if grid == 'desk' else settings.DEFAULT_SAMPLES
    sampler = _sampler(settings, samples if samples is not None else default_samples, seed, steps)
    spec = AtlasSpec.uniform(
        n_omega or default, n_phi or default, omega_max, phi_max,
        sampler=sampler, base_design=template, retain_outputs=retain
    )

    result = run_atlas(spec, workers=workers, use_cache=not no_cache)
    target = export_atlas(result, out or 'atlas')

    report = {'cells': len(result.cells), 'failed': [[c.i, c.j] for c in result.failed], 'out': str(target)}
    if len(result.failed) < len(result.cells):
        phi_star, omega_star, v_norm = find_volume_optimum(result)
        report['optimum'] = {'phi_deg': math.degrees(phi_star),
                             'omega_deg': math.degrees(omega_star),
                             'v_norm': v_norm}
    if min(spec.shape) >= 2:
        trend = trend_statistics(result)
        report['unr_trend'] = {k: trend[k] for k in ('fraction_negative_rows', 'fraction_negative_columns',
                                                     'inconclusive')}
    _echo_json(report)


# ============================================================================
# ENTRY POINT
# ============================================================================

def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map errors to exit codes"""
    try:
        cli.main(args=argv, prog_name='reachcloud', standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 1
    except click.Abort:
        click.echo('Aborted', err=True)
        return 1
    except ReachCloudError as e:
        logger.error(f'{type(e).__name__}: {e}')
        click.echo(f'error: {e}', err=True)
        return e.exit_code
    except OSError as e:
        logger.error(f'I/O error: {e}')
        click.echo(f'error: {e}', err=True)
        return 3
    return 0


if __name__ == '__main__':
    sys.exit(main())
