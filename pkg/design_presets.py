"""
Preset manipulator designs and design-file parsing

Design files are TOML or JSON with angles in degrees. A file either names a
preset (`preset = "minimal"` plus optional `omega_deg`, `phi_deg`) or lists
its geometry and architectures explicitly:

    name = "tapered"
    nu = 0.5

    [geometry]
    L = 1.0
    R2_0 = 0.0625
    R1_0 = 0.046875
    phi_deg = 2.0

    [[architectures]]
    omega_deg = -108     # or alpha_deg; negative means left-handed
    sigma_deg = 48
    theta0_deg = 66
"""

import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from config import Config
from exceptions import ConfigFileError, DesignValidationError
from filament_model import helical_angle_from_revolution, validate_design
from models import FiberArchitecture, ManipulatorDesign, TaperedGeometry

logger = logging.getLogger(__name__)


# ============================================================================
# PRESETS
# ============================================================================

def _geometry(phi_deg: float, L: float = 1.0) -> TaperedGeometry:
    return TaperedGeometry(
        L=L,
        R2_0=Config.OUTER_RADIUS * L,
        R1_0=Config.INNER_RADIUS * L,
        phi=math.radians(phi_deg)
    )


def minimal_design(omega_deg: float = 0.0, phi_deg: float = 0.0, L: float = 1.0) -> ManipulatorDesign:
    """
    Three single-bundle architectures: left- and right-handed helical fibers
    at 66 and 114 degrees and a longitudinal fiber at 270 degrees, 48 degrees wide
    """
    geometry = _geometry(phi_deg, L)
    alpha = helical_angle_from_revolution(geometry, math.radians(omega_deg))
    sigma = Config.BUNDLE_EXTENT
    return ManipulatorDesign(
        geometry=geometry,
        nu=Config.POISSON_RATIO,
        architectures=(
            FiberArchitecture(alpha=-alpha, sigma=sigma, theta0=math.radians(66.0)),
            FiberArchitecture(alpha=alpha, sigma=sigma, theta0=math.radians(114.0)),
            FiberArchitecture(alpha=0.0, sigma=sigma, theta0=math.radians(270.0)),
        ),
        name='minimal'
    )


def redundant_design(omega_deg: float = 0.0, phi_deg: float = 0.0, L: float = 1.0) -> ManipulatorDesign:
    """Minimal design with its longitudinal fiber split into two adjacent 24-degree halves"""
    base = minimal_design(omega_deg, phi_deg, L)
    half = Config.BUNDLE_EXTENT / 2.0
    helical = base.architectures[:2]
    return ManipulatorDesign(
        geometry=base.geometry,
        nu=base.nu,
        architectures=helical + (
            FiberArchitecture(alpha=0.0, sigma=half, theta0=math.radians(258.0)),
            FiberArchitecture(alpha=0.0, sigma=half, theta0=math.radians(282.0)),
        ),
        name='redundant'
    )


PRESETS = {
    'minimal': minimal_design,
    'redundant': redundant_design
}


def preset_design(name: str, omega_deg: float = 0.0, phi_deg: float = 0.0, L: float = 1.0) -> ManipulatorDesign:
    if name not in PRESETS:
        raise ConfigFileError(f'unknown preset {name!r}; choose from {sorted(PRESETS)}', field='preset')
    return PRESETS[name](omega_deg=omega_deg, phi_deg=phi_deg, L=L)


# ============================================================================
# FILE SCHEMA
# ============================================================================

class GeometrySchema(BaseModel):
    model_config = ConfigDict(extra='forbid')

    L: float = Field(1.0, gt=0)
    R2_0: Optional[float] = None
    R1_0: Optional[float] = None
    phi_deg: float = 0.0


class ArchitectureSchema(BaseModel):
    model_config = ConfigDict(extra='forbid')

    alpha_deg: Optional[float] = None
    omega_deg: Optional[float] = None
    sigma_deg: float = math.degrees(Config.BUNDLE_EXTENT)
    theta0_deg: float
    n: int = 1

    @model_validator(mode='after')
    def one_helix_parameter(self):
        if self.alpha_deg is not None and self.omega_deg is not None:
            raise ValueError('give either alpha_deg or omega_deg, not both')
        return self


class DesignSchema(BaseModel):
    model_config = ConfigDict(extra='forbid')

    name: str = 'custom'
    preset: Optional[Literal['minimal', 'redundant']] = None
    omega_deg: float = 0.0
    phi_deg: Optional[float] = None
    nu: float = Config.POISSON_RATIO
    geometry: Optional[GeometrySchema] = None
    architectures: List[ArchitectureSchema] = Field(default_factory=list)

    @model_validator(mode='after')
    def preset_or_explicit(self):
        if self.preset is None and not self.architectures:
            raise ValueError('either a preset or at least one architecture is required')
        if self.preset is not None and self.architectures:
            raise ValueError('a preset cannot be combined with explicit architectures')
        return self


def _line_of(text: str, key: str) -> Optional[int]:
    """First line assigning key in a TOML or JSON document"""
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]')
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return number
    return None


def _load(path: Path) -> Tuple[Dict[str, Any], str]:
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigFileError(f'cannot read design file {path}: {e}')

    suffix = path.suffix.lower()
    if suffix == '.toml':
        try:
            return tomllib.loads(text), text
        except tomllib.TOMLDecodeError as e:
            match = re.search(r'line (\d+)', str(e))
            raise ConfigFileError(f'invalid TOML: {e}', line=int(match.group(1)) if match else None)
    if suffix == '.json':
        try:
            return json.loads(text), text
        except json.JSONDecodeError as e:
            raise ConfigFileError(f'invalid JSON: {e.msg}', line=e.lineno)
    raise ConfigFileError(f'unsupported design file type {suffix!r}; use .toml or .json')


def design_from_schema(schema: DesignSchema) -> ManipulatorDesign:
    """Build a ManipulatorDesign (radians internally) from a validated schema"""
    if schema.preset is not None:
        L = schema.geometry.L if schema.geometry else 1.0
        design = preset_design(schema.preset, schema.omega_deg, schema.phi_deg or 0.0, L=L)
        return ManipulatorDesign(design.geometry, schema.nu, design.architectures, name=schema.name
                                 if schema.name != 'custom' else design.name)

    g = schema.geometry or GeometrySchema()
    phi_deg = schema.phi_deg if schema.phi_deg is not None else g.phi_deg
    geometry = TaperedGeometry(
        L=g.L,
        R2_0=g.R2_0 if g.R2_0 is not None else Config.OUTER_RADIUS * g.L,
        R1_0=g.R1_0 if g.R1_0 is not None else Config.INNER_RADIUS * g.L,
        phi=math.radians(phi_deg)
    )

    architectures = []
    for arch in schema.architectures:
        if arch.omega_deg is not None:
            magnitude = helical_angle_from_revolution(geometry, math.radians(abs(arch.omega_deg)))
            alpha = math.copysign(magnitude, arch.omega_deg)
        else:
            alpha = math.radians(arch.alpha_deg or 0.0)
        architectures.append(FiberArchitecture(
            alpha=alpha,
            sigma=math.radians(arch.sigma_deg),
            theta0=math.radians(arch.theta0_deg),
            n=arch.n
        ))
    return ManipulatorDesign(geometry=geometry, nu=schema.nu, architectures=tuple(architectures), name=schema.name)


def parse_design(path) -> ManipulatorDesign:
    """
    Load and validate a design file

    Raises:
        ConfigFileError: unreadable file, syntax error or schema violation (line/field)
        DesignValidationError: the design violates a model invariant
    """
    path = Path(path)
    payload, text = _load(path)
    try:
        schema = DesignSchema.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        location = '.'.join(str(part) for part in first['loc']) or None
        keys = [part for part in first['loc'] if isinstance(part, str)]
        line = _line_of(text, keys[-1]) if keys else None
        raise ConfigFileError(first['msg'], line=line, field=location)

    design = design_from_schema(schema)
    violations = validate_design(design)
    if violations:
        raise DesignValidationError(violations)
    logger.info(f'Design {design.name} loaded from {path} ({design.total_bundles} bundles)')
    return design


def design_to_file_dict(design: ManipulatorDesign) -> Dict[str, Any]:
    """Explicit file representation (degrees) of any design"""
    g = design.geometry
    return {
        'name': design.name,
        'nu': design.nu,
        'geometry': {'L': g.L, 'R2_0': g.R2_0, 'R1_0': g.R1_0, 'phi_deg': math.degrees(g.phi)},
        'architectures': [
            {
                'alpha_deg': math.degrees(a.alpha),
                'sigma_deg': math.degrees(a.sigma),
                'theta0_deg': math.degrees(a.theta0),
                'n': a.n
            }
            for a in design.architectures
        ]
    }
