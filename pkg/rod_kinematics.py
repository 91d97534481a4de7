"""
Kinematics of the active filament

Integrates r' = zeta d3 and d_i' = zeta u x d_i over Z in [0, L] with a fixed
step fourth-order Runge-Kutta scheme. Frames are stored as unit quaternions
(w, x, y, z) mapping the base frame (x, y, z) onto (d1, d2, d3).
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from exceptions import ParameterError
from filament_model import FieldTable, require_valid
from models import ActivationState, LocalFields, ManipulatorDesign, RodConfiguration

logger = logging.getLogger(__name__)


# ============================================================================
# QUATERNION HELPERS
# ============================================================================

def _quat_times_pure(q, u):
    """q (x) (0, u) for batches of quaternions q (N, 4) and vectors u (N, 3)"""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    u1, u2, u3 = u[:, 0], u[:, 1], u[:, 2]
    out = np.empty_like(q)
    out[:, 0] = -(x * u1 + y * u2 + z * u3)
    out[:, 1] = w * u1 + y * u3 - z * u2
    out[:, 2] = w * u2 + z * u1 - x * u3
    out[:, 3] = w * u3 + x * u2 - y * u1
    return out


def _tangent(q):
    """d3 = R(q) e3, valid for quaternions that are not exactly unit length"""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    norm_sq = w * w + x * x + y * y + z * z
    d3 = np.empty((q.shape[0], 3))
    d3[:, 0] = 2.0 * (x * z + w * y) / norm_sq
    d3[:, 1] = 2.0 * (y * z - w * x) / norm_sq
    d3[:, 2] = (w * w - x * x - y * y + z * z) / norm_sq
    return d3


def _normalize(q):
    norm = np.sqrt(q[:, 0] * q[:, 0] + q[:, 1] * q[:, 1] + q[:, 2] * q[:, 2] + q[:, 3] * q[:, 3])
    return q / norm[:, None]


# ============================================================================
# INTEGRATION
# ============================================================================

def check_steps(steps: int):
    if int(steps) != steps or steps < 2:
        raise ParameterError(f'steps must be an integer >= 2, got {steps}')


def build_field_table(design: ManipulatorDesign, steps: int) -> FieldTable:
    """Field table on the Runge-Kutta grid: every node and every half step"""
    check_steps(steps)
    z_points = np.linspace(0.0, design.geometry.L, 2 * int(steps) + 1)
    return FieldTable(design, z_points)


def integrate_batch(table: FieldTable, gammas: np.ndarray, record: bool = False):
    """
    Integrate many activation vectors at once

    All arithmetic is elementwise per sample, so a sample's result does not
    depend on which batch it was integrated in.

    Args:
        table: FieldTable on a grid of 2*steps + 1 points
        gammas: (N, B) activation vectors
        record: keep positions and quaternions at every node

    Returns:
        dict: 'positions' (N, 3) and 'quaternions' (N, 4) at Z = L; with
        record=True also 'trajectory' (steps+1, N, 3) and 'frames' (steps+1, N, 4)
    """
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    n = gammas.shape[0]
    steps = (table.z_points.size - 1) // 2
    h = table.design.geometry.L / steps

    r = np.zeros((n, 3))
    q = np.zeros((n, 4))
    q[:, 0] = 1.0

    if record:
        trajectory = np.empty((steps + 1, n, 3))
        frames = np.empty((steps + 1, n, 4))
        trajectory[0], frames[0] = r, q

    # fields at the left node are reused from the previous step's right node
    zeta_left, u_left = table.evaluate(gammas, 0)
    for k in range(steps):
        zeta_mid, u_mid = table.evaluate(gammas, 2 * k + 1)
        zeta_right, u_right = table.evaluate(gammas, 2 * k + 2)

        kr1 = zeta_left[:, None] * _tangent(q)
        kq1 = 0.5 * zeta_left[:, None] * _quat_times_pure(q, u_left)

        q2 = q + 0.5 * h * kq1
        kr2 = zeta_mid[:, None] * _tangent(q2)
        kq2 = 0.5 * zeta_mid[:, None] * _quat_times_pure(q2, u_mid)

        q3 = q + 0.5 * h * kq2
        kr3 = zeta_mid[:, None] * _tangent(q3)
        kq3 = 0.5 * zeta_mid[:, None] * _quat_times_pure(q3, u_mid)

        q4 = q + h * kq3
        kr4 = zeta_right[:, None] * _tangent(q4)
        kq4 = 0.5 * zeta_right[:, None] * _quat_times_pure(q4, u_right)

        r = r + (h / 6.0) * (kr1 + 2.0 * kr2 + 2.0 * kr3 + kr4)
        q = _normalize(q + (h / 6.0) * (kq1 + 2.0 * kq2 + 2.0 * kq3 + kq4))
        zeta_left, u_left = zeta_right, u_right

        if record:
            trajectory[k + 1], frames[k + 1] = r, q

    result = {'positions': r, 'quaternions': q}
    if record:
        result['trajectory'] = trajectory
        result['frames'] = frames
    return result


def integrate(design: ManipulatorDesign, act: ActivationState, steps: int) -> RodConfiguration:
    """
    Deformed configuration of one activated manipulator

    Args:
        design: ManipulatorDesign
        act: ActivationState
        steps: number of Runge-Kutta steps over [0, L]

    Returns:
        RodConfiguration with steps + 1 stations
    """
    check_steps(steps)
    require_valid(design)
    act.check_layout(design)

    table = build_field_table(design, steps)
    gamma = act.flat()[None, :]
    result = integrate_batch(table, gamma, record=True)

    z_grid = table.z_points[::2]
    fields = []
    for index in range(0, table.z_points.size, 2):
        zeta, u = table.evaluate(gamma, index)
        fields.append(LocalFields(zeta_hat=float(zeta[0]), u_hat=tuple(float(v) for v in u[0])))

    return RodConfiguration(
        z_grid=z_grid,
        centerline=result['trajectory'][:, 0, :],
        frames=result['frames'][:, 0, :],
        fields=fields
    )


def end_effector(config: RodConfiguration) -> np.ndarray:
    """Centerline position at Z = L"""
    return np.array(config.centerline[-1], dtype=float)


# ============================================================================
# CURVATURE AND FRAMES
# ============================================================================

def bending_curvature(fields: LocalFields) -> float:
    """Bending curvature norm sqrt(u1^2 + u2^2); twist is excluded"""
    return math.hypot(fields.u_hat[0], fields.u_hat[1])


def bending_curvature_array(u: np.ndarray) -> np.ndarray:
    """Vectorised bending curvature of an (N, 3) curvature array"""
    u = np.atleast_2d(u)
    return np.hypot(u[:, 0], u[:, 1])


def frame_matrices(config: RodConfiguration) -> np.ndarray:
    """Director frames as (steps+1, 3, 3) matrices whose columns are d1, d2, d3"""
    # scipy expects scalar-last quaternions
    return Rotation.from_quat(config.frames[:, [1, 2, 3, 0]]).as_matrix()


def frame_orthonormality_error(config: RodConfiguration) -> float:
    """
    Largest deviation of d_i . d_j from the Kronecker delta over all stations

    The stored quaternions are not renormalised first: a quaternion of norm
    |q| spans a frame with Gram matrix |q|^4 I, so norm drift is included.
    """
    mats = frame_matrices(config)
    gram = np.einsum('kij,kil->kjl', mats, mats)
    rotation_error = float(np.max(np.abs(gram - np.eye(3)[None, :, :])))
    norms = np.linalg.norm(config.frames, axis=1)
    drift = float(np.max(np.abs(norms ** 4 - 1.0)))
    logger.debug(f'frame orthonormality: rotation {rotation_error:.3e}, norm drift {drift:.3e}')
    return max(rotation_error, drift)


def arclength(config: RodConfiguration) -> float:
    """
    Length of the discrete centerline

    Chord sums underestimate a curved arc by O(h^2); with an even step count
    the full and every-other-station chord sums are Richardson-combined,
    leaving an O(h^4) error.
    """
    points = config.centerline
    fine = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))
    if (len(points) - 1) % 2:
        return fine
    coarse = float(np.sum(np.linalg.norm(np.diff(points[::2], axis=0), axis=1)))
    return (4.0 * fine - coarse) / 3.0


# ============================================================================
# CONVERGENCE AND EXPORT
# ============================================================================

def convergence_report(design: ManipulatorDesign, act: ActivationState, steps_list: Sequence[int],
                       reference: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """
    End-effector error against a reference for increasing step counts

    Args:
        design: ManipulatorDesign
        act: ActivationState
        steps_list: ascending step counts
        reference: exact end-effector position; when omitted a run with four
            times the finest step count serves as reference

    Returns:
        DataFrame with columns steps, error, observed_order
    """
    steps_list = [int(s) for s in steps_list]
    if not steps_list:
        raise ParameterError('steps_list must not be empty')
    if any(b <= a for a, b in zip(steps_list, steps_list[1:])):
        raise ParameterError(f'steps_list must be strictly ascending, got {steps_list}')
    for steps in steps_list:
        check_steps(steps)

    if reference is None:
        reference_steps = 4 * steps_list[-1]
        logger.info(f'Convergence reference from {reference_steps} steps')
        reference = end_effector(integrate(design, act, reference_steps))
    reference = np.asarray(reference, dtype=float)

    rows: List[dict] = []
    for steps in steps_list:
        error = float(np.linalg.norm(end_effector(integrate(design, act, steps)) - reference))
        order = float('nan')
        if rows and rows[-1]['error'] > 0 and error > 0:
            order = math.log(rows[-1]['error'] / error) / math.log(steps / rows[-1]['steps'])
        rows.append({'steps': steps, 'error': error, 'observed_order': order})
        logger.debug(f'steps={steps} error={error:.3e} order={order:.2f}')

    return pd.DataFrame(rows, columns=['steps', 'error', 'observed_order'])


def centerline_frame(config: RodConfiguration) -> pd.DataFrame:
    """Per-station table of position, frame, fields and bending curvature"""
    fields = config.fields
    return pd.DataFrame({
        'Z': config.z_grid,
        'x': config.centerline[:, 0],
        'y': config.centerline[:, 1],
        'z': config.centerline[:, 2],
        'qw': config.frames[:, 0],
        'qx': config.frames[:, 1],
        'qy': config.frames[:, 2],
        'qz': config.frames[:, 3],
        'zeta_hat': [f.zeta_hat for f in fields],
        'u1': [f.u_hat[0] for f in fields],
        'u2': [f.u_hat[1] for f in fields],
        'u3': [f.u_hat[2] for f in fields],
        'kappa': [bending_curvature(f) for f in fields]
    })


def export_centerline(config: RodConfiguration, path) -> None:
    """Write the centerline table as CSV"""
    frame = centerline_frame(config)
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.info(f'Centerline with {len(frame)} stations written to {path}')
