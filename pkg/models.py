"""
Data models for tapered fiber-actuated slender manipulators

All lengths are in units of the manipulator length L (L = 1 internally);
all angles are in radians.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import DomainError, ShapeError


@dataclass(frozen=True)
class TaperedGeometry:
    """Truncated-cone tube: outer/inner radius at Z=0 and taper half-angle"""
    L: float = 1.0
    R2_0: float = 1.0 / 16.0
    R1_0: float = 3.0 / 64.0
    phi: float = 0.0

    @property
    def tip_scale(self) -> float:
        """f(L), the tip radius as a fraction of the base radius"""
        return 1.0 - self.L * math.tan(self.phi) / self.R2_0

    def to_dict(self):
        return {
            'L': self.L,
            'R2_0': self.R2_0,
            'R1_0': self.R1_0,
            'phi': self.phi
        }


@dataclass(frozen=True)
class FiberArchitecture:
    """One helical fiber architecture with n equidistant bundles"""
    alpha: float
    sigma: float
    theta0: float
    n: int = 1

    def bundle_angles(self) -> np.ndarray:
        """Cross-sectional polar angle of every bundle at Z=0"""
        return self.theta0 + 2.0 * np.pi * np.arange(self.n) / self.n

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'sigma': self.sigma,
            'theta0': self.theta0,
            'n': int(self.n)
        }


@dataclass(frozen=True)
class ManipulatorDesign:
    """Geometry, material and fiber architectures of a manipulator"""
    geometry: TaperedGeometry
    nu: float
    architectures: Tuple[FiberArchitecture, ...]
    name: str = 'custom'

    def __post_init__(self):
        # tuples keep the design hashable and immutable
        object.__setattr__(self, 'architectures', tuple(self.architectures))

    @property
    def bundle_counts(self) -> List[int]:
        return [arch.n for arch in self.architectures]

    @property
    def total_bundles(self) -> int:
        return int(sum(self.bundle_counts))

    def to_dict(self):
        return {
            'name': self.name,
            'geometry': self.geometry.to_dict(),
            'nu': self.nu,
            'architectures': [arch.to_dict() for arch in self.architectures]
        }

    def digest(self) -> str:
        """Content hash of everything that influences the kinematics"""
        payload = self.to_dict()
        payload.pop('name')
        blob = json.dumps(payload, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(blob.encode('utf-8')).hexdigest()


@dataclass
class ActivationState:
    """Per-architecture, per-bundle activation values"""
    gamma: List[List[float]]

    @classmethod
    def from_flat(cls, design: ManipulatorDesign, values: Sequence[float]) -> 'ActivationState':
        values = [float(v) for v in np.asarray(values, dtype=float).ravel()]
        if len(values) != design.total_bundles:
            raise ShapeError(
                f'expected {design.total_bundles} activation values, got {len(values)}'
            )
        gamma, start = [], 0
        for count in design.bundle_counts:
            gamma.append(values[start:start + count])
            start += count
        return cls(gamma=gamma)

    @classmethod
    def zeros(cls, design: ManipulatorDesign) -> 'ActivationState':
        return cls(gamma=[[0.0] * n for n in design.bundle_counts])

    def flat(self) -> np.ndarray:
        return np.array([g for per_arch in self.gamma for g in per_arch], dtype=float)

    def check_layout(self, design: ManipulatorDesign):
        counts = [len(per_arch) for per_arch in self.gamma]
        if counts != design.bundle_counts:
            raise ShapeError(
                f'activation layout {counts} does not match design layout {design.bundle_counts}'
            )


@dataclass(frozen=True)
class DeltaSet:
    """Geometry/material coefficients of one architecture at one station"""
    delta0: float
    delta1: float
    delta2: float
    delta3: float
    c_phi: float
    c_alpha: float
    branch: str = 'closed_form'
    imag_residue: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LocalFields:
    """Axial extension and curvature triplet at one station"""
    zeta_hat: float
    u_hat: Tuple[float, float, float]

    def to_dict(self):
        return {'zeta_hat': self.zeta_hat, 'u_hat': list(self.u_hat)}


@dataclass(frozen=True)
class ActivationCoefficients:
    """Fourier-type activation coefficients of one architecture"""
    a0: float
    a1: float
    b1: float
    A: float
    phase: float


@dataclass
class RodConfiguration:
    """Discretised deformed configuration of the manipulator"""
    z_grid: np.ndarray
    centerline: np.ndarray
    frames: np.ndarray  # unit quaternions (w, x, y, z)
    fields: List[LocalFields]

    @property
    def steps(self) -> int:
        return len(self.z_grid) - 1


@dataclass(frozen=True)
class SamplerConfig:
    """Monte-Carlo activation sampler settings"""
    n_samples: int = 400_000
    gamma_min: float = -5.0 / 3.0
    gamma_max: float = 0.0
    seed: int = 42
    steps: int = 200

    def to_dict(self):
        return {
            'n_samples': int(self.n_samples),
            'gamma_min': self.gamma_min,
            'gamma_max': self.gamma_max,
            'seed': int(self.seed),
            'steps': int(self.steps)
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(blob.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class CloudPoint:
    """One end-effector position with its activation vector and colour"""
    position: Tuple[float, float, float]
    activation: Tuple[float, ...]
    color: Tuple[int, int, int]


@dataclass
class ReachCloud:
    """Columnar store of a reachability cloud"""
    positions: np.ndarray      # (N, 3) float64
    activations: np.ndarray    # (N, B) float32
    colors: np.ndarray         # (N, 3) uint8
    design_digest: str
    sampler: SamplerConfig
    metadata: Dict[str, object] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def __len__(self):
        return int(self.positions.shape[0])

    def __getitem__(self, index) -> CloudPoint:
        return CloudPoint(
            position=tuple(float(v) for v in self.positions[index]),
            activation=tuple(float(v) for v in self.activations[index]),
            color=tuple(int(v) for v in self.colors[index])
        )

    @property
    def points(self) -> List[CloudPoint]:
        return [self[i] for i in range(len(self))]

    @property
    def bounds(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Tight axis-aligned bounding box (lower, upper)"""
        if len(self) == 0:
            return None
        return self.positions.min(axis=0), self.positions.max(axis=0)


@dataclass
class TriangleMesh:
    """Triangle surface with outward-oriented faces"""
    vertices: np.ndarray   # (V, 3) float64
    faces: np.ndarray      # (F, 3) int64

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates of every face"""
        return self.vertices[self.faces]


@dataclass
class HullResult:
    """Concave and convex hulls of a cloud and the derived unreachability"""
    v_concave: float
    v_convex: float
    unr: float
    alpha_used: float
    concave_mesh: TriangleMesh
    convex_mesh: TriangleMesh
    thinness_flag: bool = False
    components_discarded: int = 0
    alpha_multiplier: Optional[float] = None
    median_nn: Optional[float] = None

    def __post_init__(self):
        if self.v_concave > self.v_convex * (1.0 + 1e-9):
            raise DomainError(
                f'concave volume {self.v_concave} exceeds convex volume {self.v_convex}'
            )

    def to_dict(self):
        return {
            'v_concave': float(self.v_concave),
            'v_convex': float(self.v_convex),
            'unr': float(self.unr),
            'alpha_used': float(self.alpha_used),
            'alpha_multiplier': None if self.alpha_multiplier is None else float(self.alpha_multiplier),
            'median_nn': None if self.median_nn is None else float(self.median_nn),
            'thinness_flag': bool(self.thinness_flag),
            'components_discarded': int(self.components_discarded)
        }
