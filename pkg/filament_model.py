"""
Reduced-order active filament model for tapered fiber-actuated manipulators

Closed-form axial extension and curvatures of a tubular manipulator with M
helical fiber architectures embedded between R1(Z) and R2(Z). Every function
here is pure and deterministic.

Scaling used throughout: with rho = R1/R2, t_phi = tan(phi), t_alpha = tan(alpha)
the coefficients satisfy delta0 ~ R2^2, delta1 = delta2 ~ R2^3, delta3 ~ R2^3,
with Z-independent dimensionless prefactors. They are therefore evaluated
once per architecture and rescaled by the local radius.
"""

import logging
import math
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import integrate

from config import Config
from exceptions import DesignValidationError, DomainError, ShapeError
from models import (
    ActivationCoefficients,
    ActivationState,
    DeltaSet,
    FiberArchitecture,
    LocalFields,
    ManipulatorDesign,
    TaperedGeometry,
)

logger = logging.getLogger(__name__)

# Closed forms lose accuracy to cancellation when the squared helical and
# taper slopes are this close, relative to 1 + their mean.
DIAGONAL_TOLERANCE = 1e-3
# Smallest t_phi, |t_alpha| for which the closed forms are evaluated.
SLOPE_TOLERANCE = 1e-6
# delta3 additionally needs a resolved taper slope and helical slope.
TWIST_TAPER_TOLERANCE = 2e-2
TWIST_HELIX_TOLERANCE = 1e-3
IMAG_RESIDUE_LIMIT = 1e-10


# ============================================================================
# GEOMETRY
# ============================================================================

def taper_radii(geometry: TaperedGeometry, Z):
    """
    Radii of the tapered tube at station Z

    Args:
        geometry: TaperedGeometry
        Z: station (scalar or array) in [0, L]

    Returns:
        tuple: (R1, R2, f) with R2 = R2_0 f and R1 = R1_0 f
    """
    Z_arr = np.asarray(Z, dtype=float)
    tol = 1e-12 * geometry.L
    if np.any(Z_arr < -tol) or np.any(Z_arr > geometry.L + tol):
        raise DomainError(f'station Z={Z} outside [0, {geometry.L}]')
    Z_arr = np.clip(Z_arr, 0.0, geometry.L)

    f = 1.0 - Z_arr * math.tan(geometry.phi) / geometry.R2_0
    R2 = geometry.R2_0 * f
    R1 = geometry.R1_0 * f
    if np.ndim(Z) == 0:
        return float(R1), float(R2), float(f)
    return R1, R2, f


def fiber_rotation(geometry: TaperedGeometry, alpha: float, Z, phi_tol: float = Config.PHI_TOL):
    """
    Total fiber rotation on the outer boundary over [0, Z]

    Uses -(tan(alpha)/sin(phi)) log f(Z) for tapered tubes and the straight-tube
    limit Z tan(alpha) / R2_0 once phi <= phi_tol.
    """
    _, _, f = taper_radii(geometry, Z)
    Z_arr = np.clip(np.asarray(Z, dtype=float), 0.0, geometry.L)
    tan_alpha = math.tan(alpha)

    if geometry.phi > phi_tol:
        # log1p keeps the log accurate while Z tan(phi) / R2_0 is small
        log_f = np.log1p(-Z_arr * math.tan(geometry.phi) / geometry.R2_0)
        theta = -(tan_alpha / math.sin(geometry.phi)) * log_f
    else:
        theta = Z_arr * tan_alpha / geometry.R2_0

    if np.ndim(Z) == 0:
        return float(theta)
    return theta


def helical_angle_from_revolution(geometry: TaperedGeometry, omega: float,
                                  phi_tol: float = Config.PHI_TOL) -> float:
    """Helical angle whose fiber completes a rotation omega over the full length"""
    if omega < 0:
        raise DomainError(f'fiber revolution must be nonnegative, got {omega}')
    if omega == 0:
        return 0.0
    if geometry.L * math.tan(geometry.phi) >= geometry.R2_0:
        raise DesignValidationError([
            f'geometry.phi: tip radius nonpositive (L tan(phi)={geometry.L * math.tan(geometry.phi):.6g} '
            f'>= R2_0={geometry.R2_0})'
        ])
    if geometry.phi > phi_tol:
        log_f_tip = math.log1p(-geometry.L * math.tan(geometry.phi) / geometry.R2_0)
        return math.atan(-omega * math.sin(geometry.phi) / log_f_tip)
    return math.atan(omega * geometry.R2_0 / geometry.L)


# ============================================================================
# DELTA COEFFICIENTS
# ============================================================================

def _radial_integrals(rho: float, x: float, y: float) -> Tuple[float, float, float]:
    """
    Radial integrals that the delta closed forms are divided differences of

    With x = t_phi^2 and y = t_alpha^2, over s in [rho, 1]:
        J0 = int 2 s / ((1 + x s^2)(1 + y s^2))
        J1 = int s^2 / ((1 + x s^2)(1 + y s^2))
        J3 = int s^3 / ((1 + y s^2) sqrt(1 + x s^2))
    """
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)
    J0 = integrate.quad(lambda s: 2.0 * s / ((1.0 + x * s * s) * (1.0 + y * s * s)), rho, 1.0, **opts)[0]
    J1 = integrate.quad(lambda s: s * s / ((1.0 + x * s * s) * (1.0 + y * s * s)), rho, 1.0, **opts)[0]
    J3 = integrate.quad(lambda s: s ** 3 / ((1.0 + y * s * s) * math.sqrt(1.0 + x * s * s)), rho, 1.0, **opts)[0]
    return J0, J1, J3


def _closed_delta0(rho, p, a, nu):
    """Closed-form delta0 at R2 = 1"""
    log_term = math.log(
        (1.0 + rho ** 2 * p ** 2) * (1.0 + a ** 2) / ((1.0 + p ** 2) * (1.0 + rho ** 2 * a ** 2))
    )
    return 2.0 * (rho ** 2 - 1.0) * nu - 2.0 * (1.0 + nu) / (p ** 2 - a ** 2) * log_term


def _closed_delta1(rho, p, a, nu):
    """Closed-form delta1 (= delta2) at R2 = 1"""
    bracket = (
        3.0 * (1.0 + nu) * (math.atan(rho * p) - math.atan(p)) * a
        + (rho ** 3 - 1.0) * nu * p ** 3 * a
        - p * (3.0 * (1.0 + nu) * (math.atan(rho * a) - math.atan(a)) + (rho ** 3 - 1.0) * nu * a ** 3)
    )
    return 2.0 / (p * a * (p ** 2 - a ** 2)) * bracket


def _closed_delta3(rho, p, a):
    """
    Complex-intermediate delta3 at R2 = 1; returns (real part, relative imaginary residue)

    Only the magnitude of the helical slope enters; the sign is applied by the caller.
    """
    D = complex(p * p - a * a)
    sqrt_D = np.sqrt(D)

    def S(R):
        return sqrt_D * math.sqrt(1.0 + p * p * R * R)

    def T(R):
        return np.arctan((a + 1j * p * p * R) / S(R))

    # S(1) - S(rho) without cancellation for small p
    s_diff = sqrt_D * p * p * (1.0 - rho * rho) / (math.sqrt(1.0 + p * p) + math.sqrt(1.0 + p * p * rho * rho))
    bracket = (T(-rho) + T(rho) - T(-1.0) - T(1.0)) * p * p + 2.0 * a * s_diff
    value = 3.0 / (p * p * a * a * sqrt_D) * bracket
    residue = abs(value.imag) / max(abs(value.real), np.finfo(float).tiny)
    return float(value.real), float(residue)


@lru_cache(maxsize=4096)
def dimensionless_deltas(rho: float, t_phi: float, t_alpha: float, nu: float) -> Dict[str, object]:
    """
    Dimensionless delta prefactors (delta_k / R2^k) and the branch used for each

    Returns:
        dict: d0, d1, d3, branch0, branch1, branch3, imag_residue
    """
    p, a = t_phi, abs(t_alpha)
    x, y = p * p, a * a
    near_diagonal = abs(x - y) < DIAGONAL_TOLERANCE * (1.0 + 0.5 * (x + y))
    regular = not near_diagonal and p >= SLOPE_TOLERANCE and a >= SLOPE_TOLERANCE

    J = None
    if regular:
        d0, branch0 = _closed_delta0(rho, p, a, nu), 'closed_form'
        d1, branch1 = _closed_delta1(rho, p, a, nu), 'closed_form'
    else:
        J = _radial_integrals(rho, x, y)
        d0 = 2.0 * (rho ** 2 - 1.0) * nu + 2.0 * (1.0 + nu) * J[0]
        d1 = 2.0 * ((rho ** 3 - 1.0) * nu + 3.0 * (1.0 + nu) * J[1])
        branch0 = branch1 = 'limit'

    residue = 0.0
    twist_regular = regular and p >= TWIST_TAPER_TOLERANCE and rho * rho * y >= TWIST_HELIX_TOLERANCE
    if a == 0.0:
        d3, branch3 = 0.0, 'limit'
    elif twist_regular:
        d3, residue = _closed_delta3(rho, p, a)
        branch3 = 'closed_form'
        if residue >= IMAG_RESIDUE_LIMIT:
            logger.warning(f'delta3 imaginary residue {residue:.3e} at t_phi={p}, t_alpha={a}')
    else:
        if J is None:
            J = _radial_integrals(rho, x, y)
        d3, branch3 = 6.0 * a * J[2], 'limit'
    d3 = math.copysign(d3, t_alpha) if d3 != 0.0 else 0.0

    logger.debug(f'delta branches rho={rho:.4f} t_phi={p:.3e} t_alpha={a:.3e}: '
                 f'{branch0}/{branch1}/{branch3}')
    return {
        'd0': d0,
        'd1': d1,
        'd3': d3,
        'branch0': branch0,
        'branch1': branch1,
        'branch3': branch3,
        'imag_residue': residue
    }


def delta_coefficients(geometry: TaperedGeometry, alpha: float, nu: float, Z: float) -> DeltaSet:
    """
    delta0..delta3 of one architecture at station Z

    Args:
        geometry: TaperedGeometry
        alpha: helical angle at R = R2 (rad)
        nu: Poisson ratio
        Z: station in [0, L]

    Returns:
        DeltaSet
    """
    if abs(alpha) >= math.pi / 2:
        raise DomainError(f'helical angle must satisfy |alpha| < pi/2, got {alpha}')
    _, R2, _ = taper_radii(geometry, Z)
    rho = geometry.R1_0 / geometry.R2_0
    dim = dimensionless_deltas(rho, math.tan(geometry.phi), math.tan(alpha), nu)
    delta1 = dim['d1'] * R2 ** 3
    branch = 'closed_form' if dim['branch3'] == dim['branch0'] == 'closed_form' else 'limit'
    return DeltaSet(
        delta0=dim['d0'] * R2 ** 2,
        delta1=delta1,
        delta2=delta1,
        delta3=dim['d3'] * R2 ** 3,
        c_phi=math.tan(geometry.phi) / R2,
        c_alpha=math.tan(alpha) / R2,
        branch=branch,
        imag_residue=dim['imag_residue']
    )


# ============================================================================
# ACTIVATION
# ============================================================================

def activation_coefficients(arch: FiberArchitecture, gammas: Sequence[float]) -> ActivationCoefficients:
    """
    Fourier-type coefficients a0, a1, b1 of the bundle activations

    Returns:
        ActivationCoefficients with A = sqrt(a1^2 + b1^2), phase = -atan2(b1, a1)
    """
    gammas = np.asarray(gammas, dtype=float).ravel()
    if gammas.size != arch.n:
        raise ShapeError(f'architecture has {arch.n} bundles, got {gammas.size} activations')

    angles = arch.bundle_angles()
    a0 = arch.sigma / math.pi * float(np.sum(gammas))
    weight = 2.0 * math.sin(arch.sigma / 2.0) / math.pi
    a1 = weight * float(np.sum(gammas * np.cos(angles)))
    b1 = weight * float(np.sum(gammas * np.sin(angles)))
    amplitude = math.hypot(a1, b1)
    # atan2(0, 0) is taken as 0; the phase is irrelevant at zero amplitude
    phase = -math.atan2(b1, a1) if amplitude > 0.0 else 0.0
    return ActivationCoefficients(a0=a0, a1=a1, b1=b1, A=amplitude, phase=phase)


def local_fields(design: ManipulatorDesign, act: ActivationState, Z: float) -> LocalFields:
    """
    Post-activation axial extension and curvatures at station Z

    Args:
        design: ManipulatorDesign
        act: ActivationState matching the design's bundle layout
        Z: station in [0, L]

    Returns:
        LocalFields
    """
    act.check_layout(design)
    geometry = design.geometry
    _, R2, _ = taper_radii(geometry, Z)

    zeta_sum = 0.0
    u1_sum = u2_sum = u3_sum = 0.0
    for arch, gammas in zip(design.architectures, act.gamma):
        coeffs = activation_coefficients(arch, gammas)
        deltas = delta_coefficients(geometry, arch.alpha, design.nu, Z)
        theta = fiber_rotation(geometry, arch.alpha, Z)
        zeta_sum += deltas.delta0 * coeffs.a0
        u1_sum += deltas.delta1 * coeffs.A * math.sin(coeffs.phase - theta)
        u2_sum += deltas.delta2 * coeffs.A * math.cos(coeffs.phase - theta)
        u3_sum += deltas.delta3 * coeffs.a0

    zeta_hat = 1.0 + zeta_sum / (4.0 * R2 ** 2)
    bending = -2.0 / (3.0 * R2 ** 4)
    twist = 2.0 * (1.0 + design.nu) / (3.0 * R2 ** 4)
    return LocalFields(
        zeta_hat=zeta_hat,
        u_hat=(bending * u1_sum, bending * u2_sum, twist * u3_sum)
    )


# ============================================================================
# PRECOMPUTED FIELD TABLE
# ============================================================================

class FieldTable:
    """
    Linear maps from a flat activation vector to zeta_hat and u_hat on a Z grid

    zeta_hat(Z) = 1 + zeta_coef(Z) . Gamma and u_hat(Z) = u_coef(Z) . Gamma,
    because a0, a1, b1 are linear in the bundle activations. This is the same
    model as local_fields, rearranged so a batch of activations costs only
    elementwise products.
    """

    def __init__(self, design: ManipulatorDesign, z_points):
        self.design = design
        self.z_points = np.asarray(z_points, dtype=float)
        self.n_bundles = design.total_bundles
        geometry = design.geometry
        _, R2, _ = taper_radii(geometry, self.z_points)
        rho = geometry.R1_0 / geometry.R2_0

        nz = self.z_points.size
        self.zeta_coef = np.zeros((nz, self.n_bundles))
        self.u_coef = np.zeros((nz, 3, self.n_bundles))

        bending = -2.0 / (3.0 * R2 ** 4)
        twist = 2.0 * (1.0 + design.nu) / (3.0 * R2 ** 4)
        column = 0
        for arch in design.architectures:
            dim = dimensionless_deltas(rho, math.tan(geometry.phi), math.tan(arch.alpha), design.nu)
            delta0 = dim['d0'] * R2 ** 2
            delta1 = dim['d1'] * R2 ** 3
            delta3 = dim['d3'] * R2 ** 3
            theta = fiber_rotation(geometry, arch.alpha, self.z_points)
            weight = 2.0 * math.sin(arch.sigma / 2.0) / math.pi
            for bundle_angle in arch.bundle_angles():
                self.zeta_coef[:, column] = delta0 * (arch.sigma / math.pi) / (4.0 * R2 ** 2)
                # A sin(phase - theta) = -weight * gamma * sin(bundle_angle + theta)
                self.u_coef[:, 0, column] = -bending * delta1 * weight * np.sin(bundle_angle + theta)
                self.u_coef[:, 1, column] = bending * delta1 * weight * np.cos(bundle_angle + theta)
                self.u_coef[:, 2, column] = twist * delta3 * (arch.sigma / math.pi)
                column += 1

    def evaluate(self, gammas: np.ndarray, index: int):
        """
        Fields for a batch of activations at grid point `index`

        Args:
            gammas: (N, B) activation vectors
            index: position in z_points

        Returns:
            tuple: zeta (N,), u (N, 3)
        """
        gammas = np.atleast_2d(gammas)
        if gammas.shape[1] != self.n_bundles:
            raise ShapeError(f'expected {self.n_bundles} activations per sample, got {gammas.shape[1]}')
        zeta = np.ones(gammas.shape[0])
        u = np.zeros((gammas.shape[0], 3))
        # explicit accumulation keeps every sample's arithmetic independent of batch size
        for b in range(self.n_bundles):
            g = gammas[:, b]
            zeta += self.zeta_coef[index, b] * g
            u[:, 0] += self.u_coef[index, 0, b] * g
            u[:, 1] += self.u_coef[index, 1, b] * g
            u[:, 2] += self.u_coef[index, 2, b] * g
        return zeta, u


# ============================================================================
# VALIDATION AND SUMMARY
# ============================================================================

def validate_design(design: ManipulatorDesign) -> List[str]:
    """
    Check every design invariant

    Returns:
        list: violation messages naming field and constraint; empty when valid
    """
    violations = []
    g = design.geometry

    if not g.L > 0:
        violations.append(f'geometry.L: length must be positive (got {g.L})')
    if not g.R1_0 > 0:
        violations.append(f'geometry.R1_0: inner radius must be positive (got {g.R1_0})')
    if not g.R1_0 < g.R2_0:
        violations.append(f'geometry.R1_0: inner radius must be smaller than outer radius '
                          f'(got R1_0={g.R1_0}, R2_0={g.R2_0})')
    if not g.R2_0 < g.L:
        violations.append(f'geometry.R2_0: outer radius must be smaller than length (slenderness) '
                          f'(got R2_0={g.R2_0}, L={g.L})')
    if not 0 <= g.phi < math.pi / 2:
        violations.append(f'geometry.phi: tapering angle must lie in [0, pi/2) (got {g.phi})')
    elif g.L * math.tan(g.phi) >= g.R2_0:
        violations.append(f'geometry.phi: tip radius nonpositive (L tan(phi)={g.L * math.tan(g.phi):.6g} '
                          f'>= R2_0={g.R2_0})')

    if not 0 < design.nu <= 0.5:
        violations.append(f'nu: Poisson ratio must lie in (0, 0.5] (got {design.nu})')
    if len(design.architectures) < 1:
        violations.append('architectures: at least one fiber architecture is required')

    for i, arch in enumerate(design.architectures):
        if not abs(arch.alpha) < math.pi / 2:
            violations.append(f'architectures[{i}].alpha: |alpha| must be below pi/2 (got {arch.alpha})')
        if not arch.sigma > 0:
            violations.append(f'architectures[{i}].sigma: angular extent must be positive (got {arch.sigma})')
        if int(arch.n) != arch.n or arch.n < 1:
            violations.append(f'architectures[{i}].n: bundle count must be an integer >= 1 (got {arch.n})')
        elif arch.n * arch.sigma > 2 * math.pi + 1e-12:
            violations.append(f'architectures[{i}].sigma: bundles overlap (n*sigma={arch.n * arch.sigma:.6g} > 2pi)')

    if design.architectures and design.total_bundles < 1:
        violations.append('architectures: total bundle count must be at least 1')
    return violations


def require_valid(design: ManipulatorDesign):
    """Raise DesignValidationError when the design violates an invariant"""
    violations = validate_design(design)
    if violations:
        raise DesignValidationError(violations)


def design_summary(design: ManipulatorDesign) -> Dict[str, object]:
    """Human-oriented digest of a design: angles in degrees, taper ratio, revolutions"""
    g = design.geometry
    f_tip = g.tip_scale
    return {
        'name': design.name,
        'digest': design.digest(),
        'phi_deg': math.degrees(g.phi),
        'R2_0': g.R2_0,
        'R1_0': g.R1_0,
        'tip_radius': g.R2_0 * f_tip,
        'taper_ratio': (1.0 / f_tip) if f_tip > 0 else float('inf'),
        'nu': design.nu,
        'total_bundles': design.total_bundles,
        'architectures': [
            {
                'alpha_deg': math.degrees(arch.alpha),
                'omega_deg': math.degrees(fiber_rotation(g, arch.alpha, g.L)) if f_tip > 0 else None,
                'sigma_deg': math.degrees(arch.sigma),
                'theta0_deg': math.degrees(arch.theta0),
                'n': arch.n
            }
            for arch in design.architectures
        ]
    }
