"""
Hull metrics of reachability clouds

Convex hull (Qhull), alpha-shape concave hull on the 3D Delaunay
tetrahedralization, divergence-theorem mesh volumes, a voxel-occupancy volume
oracle and the unreachability fraction UNR = 1 - V_concave / V_convex.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from config import get_config
from exceptions import (
    DegenerateHullError,
    DomainError,
    EmptyShapeError,
    MeshTopologyError,
    ParameterError,
)
from models import HullResult, TriangleMesh
from ply_io import write_mesh_ply, write_off

logger = logging.getLogger(__name__)

DELAUNAY_OPTIONS = 'Qbb Qc Qz Q12 Qt'
MAX_VOXELS = 200_000_000

# faces opposite each tetrahedron vertex
_OPPOSITE = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ParameterError(f'expected an (N, 3) point array, got shape {points.shape}')
    return points


def affine_dimension(points: np.ndarray) -> int:
    """Dimension of the affine hull of a point set (-1 for no points)"""
    if len(points) == 0:
        return -1
    centered = points - points.mean(axis=0)
    scale = max(float(np.abs(centered).max()), 1e-300)
    return int(np.linalg.matrix_rank(centered / scale, tol=1e-10))


def _compact(vertices: np.ndarray, faces: np.ndarray) -> TriangleMesh:
    """Keep only referenced vertices and renumber faces"""
    used, inverse = np.unique(faces.ravel(), return_inverse=True)
    return TriangleMesh(vertices=vertices[used].copy(), faces=inverse.reshape(-1, 3).astype(np.int64))


# ============================================================================
# CONVEX HULL
# ============================================================================

def convex_hull(points) -> TriangleMesh:
    """
    Convex hull as an outward-oriented triangle mesh

    Raises:
        DegenerateHullError: fewer than 4 points or no 3D extent
    """
    points = _as_points(points)
    dimension = affine_dimension(points)
    if len(points) < 4 or dimension < 3:
        raise DegenerateHullError(f'convex hull needs 4 non-coplanar points, got {len(points)}',
                                  dimension=dimension)
    try:
        hull = ConvexHull(points)
    except QhullError as e:
        raise DegenerateHullError(f'Qhull failed: {str(e).splitlines()[0]}', dimension=dimension)

    faces = hull.simplices.astype(np.int64).copy()
    interior = points[hull.vertices].mean(axis=0)
    a, b, c = points[faces[:, 0]], points[faces[:, 1]], points[faces[:, 2]]
    inward = np.einsum('ij,ij->i', np.cross(b - a, c - a), a - interior) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    mesh = _compact(points, faces)
    logger.debug(f'convex hull: {mesh.n_faces} faces, volume {hull.volume:.6g}')
    return mesh


# ============================================================================
# ALPHA SHAPE
# ============================================================================

def tetra_circumradii(points: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Circumradius of every tetrahedron; inf for flat ones"""
    p0 = points[simplices[:, 0]]
    a = points[simplices[:, 1]] - p0
    b = points[simplices[:, 2]] - p0
    c = points[simplices[:, 3]] - p0
    bxc, cxa, axb = np.cross(b, c), np.cross(c, a), np.cross(a, b)
    det = np.einsum('ij,ij->i', a, bxc)
    numerator = (np.einsum('ij,ij->i', a, a)[:, None] * bxc
                 + np.einsum('ij,ij->i', b, b)[:, None] * cxa
                 + np.einsum('ij,ij->i', c, c)[:, None] * axb)
    with np.errstate(divide='ignore', invalid='ignore'):
        radii = np.linalg.norm(numerator, axis=1) / np.abs(2.0 * det)
    radii[~np.isfinite(radii)] = np.inf
    return radii


def alpha_complex(points, alpha: float) -> Dict[str, object]:
    """
    Largest connected component of the alpha-filtered Delaunay tetrahedra

    Components are connected through shared faces and ranked by volume.

    Returns:
        dict: mesh, volume, kept (tetrahedra kept in total), components, components_discarded
    """
    points = _as_points(points)
    if not alpha > 0:
        raise ParameterError(f'alpha must be positive, got {alpha}')
    dimension = affine_dimension(points)
    if len(points) < 4 or dimension < 3:
        raise DegenerateHullError(f'alpha shape needs 4 non-coplanar points, got {len(points)}',
                                  dimension=dimension)
    try:
        tri = Delaunay(points, qhull_options=DELAUNAY_OPTIONS)
    except QhullError as e:
        raise DegenerateHullError(f'Delaunay failed: {str(e).splitlines()[0]}', dimension=dimension)

    simplices = tri.simplices
    kept = np.flatnonzero(tetra_circumradii(points, simplices) <= alpha)
    if kept.size == 0:
        raise EmptyShapeError(f'no tetrahedron has circumradius <= alpha={alpha:.6g}')

    local = np.full(len(simplices), -1, dtype=np.int64)
    local[kept] = np.arange(kept.size)
    neighbors = tri.neighbors[kept]
    rows = np.repeat(np.arange(kept.size), 4)
    cols = local[np.where(neighbors.ravel() >= 0, neighbors.ravel(), 0)]
    cols = np.where(neighbors.ravel() >= 0, cols, -1)
    linked = cols >= 0
    graph = coo_matrix((np.ones(linked.sum()), (rows[linked], cols[linked])), shape=(kept.size, kept.size))
    n_components, labels = connected_components(graph, directed=False)

    p0 = points[simplices[kept, 0]]
    tet_volumes = np.abs(np.einsum(
        'ij,ij->i',
        points[simplices[kept, 1]] - p0,
        np.cross(points[simplices[kept, 2]] - p0, points[simplices[kept, 3]] - p0)
    )) / 6.0
    component_volumes = np.bincount(labels, weights=tet_volumes, minlength=n_components)
    best = int(np.argmax(component_volumes))
    in_component = np.zeros(len(simplices), dtype=bool)
    in_component[kept[labels == best]] = True

    members = np.flatnonzero(in_component)
    member_neighbors = tri.neighbors[members]
    faces = []
    for j in range(4):
        nb = member_neighbors[:, j]
        on_boundary = (nb < 0) | ~in_component[np.where(nb >= 0, nb, 0)]
        tets = simplices[members[on_boundary]]
        face = tets[:, _OPPOSITE[j]]
        apex = points[tets[:, j]]
        a, b, c = points[face[:, 0]], points[face[:, 1]], points[face[:, 2]]
        toward_apex = np.einsum('ij,ij->i', np.cross(b - a, c - a), apex - a) > 0
        face[toward_apex] = face[toward_apex][:, [0, 2, 1]]
        faces.append(face)

    mesh = _compact(points, np.concatenate(faces, axis=0).astype(np.int64))
    discarded = n_components - 1
    if discarded:
        logger.debug(f'alpha={alpha:.4g}: kept largest of {n_components} components')
    return {
        'mesh': mesh,
        'volume': float(component_volumes[best]),
        'kept': int(kept.size),
        'components': int(n_components),
        'components_discarded': int(discarded)
    }


def alpha_shape(points, alpha: float) -> TriangleMesh:
    """Boundary of the largest connected component of the alpha complex"""
    return alpha_complex(points, alpha)['mesh']


def median_nn_distance(points) -> float:
    """Median distance from each point to its nearest other point"""
    points = _as_points(points)
    if len(points) < 2:
        raise ParameterError('nearest-neighbour distance needs at least 2 points')
    distances, _ = cKDTree(points).query(points, k=2)
    return float(np.median(distances[:, 1]))


def select_alpha(points, multipliers=None, tolerance: Optional[float] = None) -> Dict[str, object]:
    """
    Calibrate alpha against the voxel volume oracle

    The smallest multiplier c whose alpha shape (alpha = c * median NN distance)
    is within tolerance of the voxel volume is chosen. When no multiplier
    qualifies, or the points cannot be tetrahedralised, the default multiplier
    is used.

    Returns:
        dict: alpha, multiplier, median_nn, voxel_volume, calibrated, volumes
    """
    settings = get_config()
    points = _as_points(points)
    multipliers = tuple(multipliers or settings.ALPHA_MULTIPLIERS)
    tolerance = settings.ALPHA_VOXEL_TOLERANCE if tolerance is None else tolerance
    h = median_nn_distance(points)

    selection = {
        'alpha': settings.DEFAULT_ALPHA_MULTIPLIER * h,
        'multiplier': settings.DEFAULT_ALPHA_MULTIPLIER,
        'median_nn': h,
        'voxel_volume': None,
        'calibrated': False,
        'volumes': {}
    }
    if len(points) < 5 or affine_dimension(points) < 3 or h <= 0:
        logger.debug('alpha calibration skipped for a degenerate point set')
        return selection

    reference = voxel_volume(points, settings.VOXEL_RESOLUTION_FACTOR * h)
    selection['voxel_volume'] = reference
    for c in sorted(multipliers):
        try:
            volume = alpha_complex(points, c * h)['volume']
        except EmptyShapeError:
            continue
        selection['volumes'][c] = volume
        if reference > 0 and abs(volume - reference) <= tolerance * reference:
            selection.update(alpha=c * h, multiplier=c, calibrated=True)
            break
    if not selection['calibrated']:
        logger.warning(f'no alpha multiplier within {tolerance:.0%} of the voxel volume '
                       f'{reference:.4g}; using c={selection["multiplier"]}')
    logger.debug(f'alpha selection: c={selection["multiplier"]}, alpha={selection["alpha"]:.4g}')
    return selection


def auto_alpha(points) -> float:
    """Voxel-calibrated alpha: multiplier times the median nearest-neighbour distance"""
    return float(select_alpha(points)['alpha'])


# ============================================================================
# VOLUMES
# ============================================================================

def boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    """
    Directed edges without a matching opposite edge

    A closed, consistently oriented surface has every directed edge (a, b)
    matched by exactly one (b, a).
    """
    f = mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    if directed.size == 0:
        return directed
    n = max(int(mesh.n_vertices), int(directed.max()) + 1)
    forward = directed[:, 0] * n + directed[:, 1]
    backward = directed[:, 1] * n + directed[:, 0]
    keys, counts = np.unique(forward, return_counts=True)
    reverse_keys, reverse_counts = np.unique(backward, return_counts=True)

    balance = dict(zip(keys.tolist(), counts.tolist()))
    for key, count in zip(reverse_keys.tolist(), reverse_counts.tolist()):
        balance[key] = balance.get(key, 0) - count
    unmatched = sorted(k for k, v in balance.items() if v > 0)
    return np.array([(k // n, k % n) for k in unmatched], dtype=np.int64).reshape(-1, 2)


def is_watertight(mesh: TriangleMesh) -> bool:
    return mesh.n_faces > 0 and boundary_edges(mesh).size == 0


def mesh_volume(mesh: TriangleMesh) -> float:
    """
    Enclosed volume by the divergence theorem

    Signed tetrahedra are taken with respect to the vertex centroid, which keeps
    the sum accurate for meshes far from the origin.

    Raises:
        MeshTopologyError: the mesh is not closed
    """
    edges = boundary_edges(mesh)
    if mesh.n_faces == 0 or edges.size:
        raise MeshTopologyError(edges)
    origin = mesh.vertices.mean(axis=0)
    tri = mesh.triangles() - origin
    volume = float(np.einsum('ij,ij->i', tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)
    if volume <= 0:
        logger.warning(f'mesh volume {volume:.6g} is not positive; faces may be inward')
    return volume


def mesh_area(mesh: TriangleMesh) -> float:
    tri = mesh.triangles()
    return float(0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1).sum())


def voxel_volume(points, resolution: float, closing: Optional[int] = None) -> float:
    """
    Volume of the filled voxel occupancy of a point set

    Occupied cells are closed with the full 3x3x3 neighbourhood, then enclosed
    cavities are filled. Empty cells inside the cloud therefore count as volume.

    Args:
        points: (N, 3) positions
        resolution: voxel edge length
        closing: closing iterations; Config.VOXEL_CLOSING_ITERATIONS when None, 0 disables

    Returns:
        float: filled voxel count times resolution^3
    """
    if not resolution > 0:
        raise ParameterError(f'voxel resolution must be positive, got {resolution}')
    closing = get_config().VOXEL_CLOSING_ITERATIONS if closing is None else int(closing)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return 0.0

    pad = closing + 1
    index = np.floor((points - points.min(axis=0)) / resolution).astype(np.int64) + pad
    shape = index.max(axis=0) + pad + 1
    if int(np.prod(shape)) > MAX_VOXELS:
        raise ParameterError(f'voxel grid {tuple(shape)} too large for resolution {resolution}')
    grid = np.zeros(tuple(shape), dtype=bool)
    grid[index[:, 0], index[:, 1], index[:, 2]] = True
    occupied = int(grid.sum())

    if closing > 0:
        structure = ndimage.generate_binary_structure(3, 3)
        grid = ndimage.binary_closing(grid, structure=structure, iterations=closing)
    grid = ndimage.binary_fill_holes(grid)
    filled = int(grid.sum())

    logger.debug(f'voxel volume: {occupied} occupied, {filled} after closing and filling '
                 f'at resolution {resolution:.4g}')
    return float(filled * resolution ** 3)


def unreachability(v_concave: float, v_convex: float) -> float:
    """UNR = 1 - v_concave / v_convex, clamped to [0, 1]"""
    if not v_concave > 0 or not v_convex > 0:
        raise DomainError(f'volumes must be positive (v_concave={v_concave}, v_convex={v_convex})')
    unr = 1.0 - v_concave / v_convex
    if not 0.0 <= unr <= 1.0:
        logger.warning(f'UNR {unr:.6g} clamped to [0, 1]')
        unr = min(max(unr, 0.0), 1.0)
    return unr


# ============================================================================
# PIPELINE AND EXPORT
# ============================================================================

def analyze_cloud(points, alpha: Optional[float] = None) -> HullResult:
    """
    Convex hull, concave hull and UNR of a point cloud

    Args:
        points: (N, 3) positions
        alpha: fixed alpha; calibrated with select_alpha when omitted

    Returns:
        HullResult
    """
    points = _as_points(points)
    convex_mesh = convex_hull(points)
    v_convex = mesh_volume(convex_mesh)

    h = median_nn_distance(points)
    multiplier = None
    if alpha is None:
        selection = select_alpha(points)
        alpha, multiplier = selection['alpha'], selection['multiplier']

    concave = alpha_complex(points, alpha)
    v_concave = mesh_volume(concave['mesh'])
    # the alpha complex lies inside the hull; trim rounding excess
    v_concave = min(v_concave, v_convex)

    thin = v_concave < h * mesh_area(convex_mesh)
    if thin:
        logger.warning(f'thin cloud: concave volume {v_concave:.4g} below NN distance x hull area')

    result = HullResult(
        v_concave=v_concave,
        v_convex=v_convex,
        unr=unreachability(v_concave, v_convex),
        alpha_used=float(alpha),
        concave_mesh=concave['mesh'],
        convex_mesh=convex_mesh,
        thinness_flag=bool(thin),
        components_discarded=concave['components_discarded'],
        alpha_multiplier=multiplier,
        median_nn=h
    )
    logger.info(f'Hull metrics: V_concave={v_concave:.5g}, V_convex={v_convex:.5g}, '
                f'UNR={result.unr:.4f}, alpha={alpha:.4g}')
    return result


def export_mesh(mesh: TriangleMesh, path) -> None:
    """Write a mesh as binary PLY or ASCII OFF, chosen by suffix"""
    suffix = Path(path).suffix.lower()
    if suffix == '.ply':
        write_mesh_ply(path, mesh.vertices, mesh.faces)
    elif suffix == '.off':
        write_off(path, mesh.vertices, mesh.faces)
    else:
        raise ParameterError(f'unsupported mesh format {suffix!r}; use .ply or .off')
    logger.info(f'Mesh with {mesh.n_faces} faces written to {path}')


def metrics_json(result: HullResult) -> str:
    return json.dumps(result.to_dict(), sort_keys=True, indent=2) + '\n'


def export_metrics(result: HullResult, path) -> None:
    Path(path).write_text(metrics_json(result))
    logger.info(f'Hull metrics written to {path}')
