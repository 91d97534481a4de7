"""
Tests for the hull metrics: convex hull, alpha shapes, mesh and voxel
volumes, unreachability
"""

import json
import math

import numpy as np
import pytest

import hull_metrics as hm
from cloud_engine import generate_cloud
from design_presets import minimal_design, redundant_design
from exceptions import DegenerateHullError, DomainError, EmptyShapeError, MeshTopologyError, ParameterError
from models import HullResult, SamplerConfig, TriangleMesh
from ply_io import read_mesh_ply, read_off

BALL_VOLUME = 4.0 * math.pi / 3.0


def _torus_points(R=1.0, r=0.5, n_interior=40_000, n_surface=20_000, seed=12):
    """Uniform interior samples plus area-weighted surface samples of a solid torus"""
    rng = np.random.default_rng(seed)
    box = rng.uniform([-R - r, -R - r, -r], [R + r, R + r, r], size=(3 * n_interior, 3))
    ring = np.hypot(box[:, 0], box[:, 1]) - R
    interior = box[ring ** 2 + box[:, 2] ** 2 <= r * r][:n_interior]

    u = rng.uniform(0.0, 2.0 * math.pi, size=4 * n_surface)
    v = rng.uniform(0.0, 2.0 * math.pi, size=4 * n_surface)
    accept = rng.uniform(0.0, R + r, size=4 * n_surface) <= R + r * np.cos(v)
    u, v = u[accept][:n_surface], v[accept][:n_surface]
    surface = np.stack([(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)], axis=1)
    return np.concatenate([interior, surface], axis=0)


# ============================================================================
# CONVEX HULL
# ============================================================================

def test_cube_hull(cube_corners):
    mesh = hm.convex_hull(cube_corners)
    assert mesh.n_faces == 12
    assert mesh.n_vertices == 8
    assert hm.is_watertight(mesh)
    assert hm.mesh_volume(mesh) == pytest.approx(1.0, abs=1e-12)
    assert hm.mesh_area(mesh) == pytest.approx(6.0, abs=1e-12)


def test_hull_volume_is_translation_invariant(cube_corners):
    far = hm.convex_hull(cube_corners + 1e4)
    assert hm.mesh_volume(far) == pytest.approx(1.0, abs=1e-9)


def test_ball_hull(ball_points):
    volume = hm.mesh_volume(hm.convex_hull(ball_points))
    assert volume < BALL_VOLUME
    assert volume == pytest.approx(BALL_VOLUME, rel=0.05)


def test_coplanar_points():
    rng = np.random.default_rng(0)
    points = np.column_stack([rng.uniform(size=(50, 2)), np.zeros(50)])
    with pytest.raises(DegenerateHullError) as err:
        hm.convex_hull(points)
    assert err.value.dimension == 2
    with pytest.raises(DegenerateHullError):
        hm.alpha_shape(points, 1.0)


def test_too_few_points(cube_corners):
    with pytest.raises(DegenerateHullError):
        hm.convex_hull(cube_corners[:3])


def test_wrong_point_shape():
    with pytest.raises(ParameterError):
        hm.convex_hull(np.zeros((10, 2)))


# ============================================================================
# ALPHA SHAPES
# ============================================================================

def test_large_alpha_recovers_the_convex_hull(ball_points):
    convex = hm.mesh_volume(hm.convex_hull(ball_points))
    complex_ = hm.alpha_complex(ball_points, np.inf)
    assert complex_['components'] == 1
    assert complex_['volume'] == pytest.approx(convex, rel=1e-9)
    assert hm.mesh_volume(complex_['mesh']) == pytest.approx(convex, rel=1e-9)


def test_tiny_alpha_is_empty(ball_points):
    with pytest.raises(EmptyShapeError):
        hm.alpha_shape(ball_points, 1e-6)


def test_nonpositive_alpha(ball_points):
    with pytest.raises(ParameterError):
        hm.alpha_shape(ball_points, 0.0)


def test_alpha_volume_grows_with_alpha(ball_points):
    volumes = [hm.alpha_complex(ball_points, a)['volume'] for a in (0.06, 0.1, 0.2, 0.5, 2.0)]
    assert all(b >= a for a, b in zip(volumes, volumes[1:]))


def test_alpha_shape_is_closed(ball_points):
    mesh = hm.alpha_shape(ball_points, 0.15)
    assert hm.is_watertight(mesh)
    assert hm.mesh_volume(mesh) > 0


def test_torus_keeps_its_hole():
    points = _torus_points()
    expected = 2.0 * math.pi ** 2 * 1.0 * 0.25
    alpha = 3.0 * (expected / len(points)) ** (1.0 / 3.0)
    volume = hm.mesh_volume(hm.alpha_shape(points, alpha))
    assert volume == pytest.approx(expected, rel=0.10)
    assert hm.mesh_volume(hm.convex_hull(points)) > 1.15 * expected


def test_separate_blobs_keep_the_largest(ball_points):
    small = 0.3 * ball_points[:2000] + np.array([10.0, 0.0, 0.0])
    complex_ = hm.alpha_complex(np.concatenate([ball_points, small]), 0.3)
    assert complex_['components_discarded'] >= 1
    assert complex_['mesh'].vertices[:, 0].max() <= 1.0


def test_deleted_face_breaks_closure(cube_corners):
    mesh = hm.convex_hull(cube_corners)
    opened = TriangleMesh(vertices=mesh.vertices, faces=mesh.faces[1:])
    assert not hm.is_watertight(opened)
    with pytest.raises(MeshTopologyError) as err:
        hm.mesh_volume(opened)
    assert len(err.value.boundary_edges) == 3


def test_alpha_selection(ball_points):
    selection = hm.select_alpha(ball_points)
    assert selection['alpha'] == pytest.approx(selection['multiplier'] * selection['median_nn'])
    assert selection['voxel_volume'] == pytest.approx(BALL_VOLUME, rel=0.15)
    assert selection['calibrated']
    chosen = selection['volumes'][selection['multiplier']]
    assert abs(chosen - selection['voxel_volume']) <= 0.10 * selection['voxel_volume']


@pytest.mark.parametrize('design', [minimal_design(108.0, 2.0), redundant_design(108.0, 2.0)],
                         ids=['minimal', 'redundant'])
def test_alpha_calibrates_on_a_generated_cloud(design):
    cloud = generate_cloud(design, SamplerConfig(n_samples=20_000, seed=42, steps=60), workers=1)
    selection = hm.select_alpha(cloud.positions)
    assert selection['calibrated']
    chosen = selection['volumes'][selection['multiplier']]
    assert abs(chosen - selection['voxel_volume']) <= 0.10 * selection['voxel_volume']


@pytest.mark.slow
def test_alpha_calibrates_on_a_full_size_cloud(minimal):
    cloud = generate_cloud(minimal, SamplerConfig(n_samples=400_000, seed=42))
    selection = hm.select_alpha(cloud.positions)
    assert selection['calibrated']
    chosen = selection['volumes'][selection['multiplier']]
    assert abs(chosen - selection['voxel_volume']) <= 0.10 * selection['voxel_volume']


def test_auto_alpha_on_a_grid():
    axis = np.arange(6) * 0.1
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing='ij'), axis=-1).reshape(-1, 3)
    grid = grid + np.random.default_rng(5).uniform(-1e-6, 1e-6, size=grid.shape)
    assert hm.median_nn_distance(grid) == pytest.approx(0.1, abs=1e-5)
    ratio = hm.auto_alpha(grid) / hm.median_nn_distance(grid)
    assert any(ratio == pytest.approx(c) for c in (4, 6, 8, 12, 16))


def test_auto_alpha_of_two_points():
    points = np.array([[0.0, 0.0, 0.0], [0.0, 0.3, 0.4]])
    assert hm.auto_alpha(points) == pytest.approx(8 * 0.5)
    with pytest.raises(DegenerateHullError):
        hm.alpha_shape(points, hm.auto_alpha(points))


def test_alpha_selection_skips_flat_sets():
    points = np.column_stack([np.random.default_rng(1).uniform(size=(30, 2)), np.zeros(30)])
    selection = hm.select_alpha(points)
    assert not selection['calibrated']
    assert selection['voxel_volume'] is None


# ============================================================================
# VOXELS AND UNR
# ============================================================================

def test_voxel_volume_of_dense_cube():
    axis = np.arange(51) * 0.02
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing='ij'), axis=-1).reshape(-1, 3)
    assert abs(hm.voxel_volume(grid, 0.05) - 1.0) <= 6 * 0.05


def test_voxel_volume_edge_cases():
    assert hm.voxel_volume(np.zeros((0, 3)), 0.1) == 0.0
    assert hm.voxel_volume(np.zeros((1, 3)), 0.1) == pytest.approx(0.001)
    with pytest.raises(ParameterError):
        hm.voxel_volume(np.zeros((4, 3)), 0.0)


def test_voxel_volume_fills_sampling_gaps(ball_points):
    h = hm.median_nn_distance(ball_points)
    open_ = hm.voxel_volume(ball_points, 2.0 * h, closing=0)
    filled = hm.voxel_volume(ball_points, 2.0 * h)
    assert filled > open_
    assert filled == pytest.approx(BALL_VOLUME, rel=0.15)


def test_voxel_volume_fills_an_enclosed_cavity():
    rng = np.random.default_rng(2)
    directions = rng.normal(size=(60_000, 3))
    shell = directions / np.linalg.norm(directions, axis=1)[:, None]
    shell *= rng.uniform(0.9, 1.0, size=(60_000, 1))
    assert hm.voxel_volume(shell, 0.03) == pytest.approx(BALL_VOLUME, rel=0.15)


def test_unreachability():
    assert hm.unreachability(0.5, 2.0) == pytest.approx(0.75)
    assert hm.unreachability(2.0, 2.0) == 0.0
    with pytest.raises(DomainError):
        hm.unreachability(0.0, 1.0)


def test_hull_result_rejects_inverted_volumes(cube_corners):
    mesh = hm.convex_hull(cube_corners)
    with pytest.raises(DomainError):
        HullResult(v_concave=2.0, v_convex=1.0, unr=0.0, alpha_used=1.0,
                   concave_mesh=mesh, convex_mesh=mesh)


# ============================================================================
# PIPELINE
# ============================================================================

def test_analyze_ball(ball_points):
    result = hm.analyze_cloud(ball_points)
    assert 0.0 <= result.unr < 0.2
    assert result.v_concave <= result.v_convex
    assert not result.thinness_flag
    assert result.alpha_multiplier in (4, 6, 8, 12, 16)


def test_analyze_cloud_and_export(small_cloud, tmp_path):
    result = hm.analyze_cloud(small_cloud.positions)
    assert 0.0 <= result.unr <= 1.0
    assert result.v_concave <= result.v_convex

    hm.export_mesh(result.concave_mesh, tmp_path / 'concave.ply')
    hm.export_mesh(result.convex_mesh, tmp_path / 'convex.off')
    vertices, faces = read_mesh_ply(tmp_path / 'concave.ply')
    assert np.array_equal(faces, result.concave_mesh.faces)
    vertices, faces = read_off(tmp_path / 'convex.off')
    assert len(faces) == result.convex_mesh.n_faces

    hm.export_metrics(result, tmp_path / 'metrics.json')
    metrics = json.loads((tmp_path / 'metrics.json').read_text())
    assert metrics['unr'] == result.unr
    assert set(metrics) >= {'v_concave', 'v_convex', 'alpha_used', 'thinness_flag'}

    with pytest.raises(ParameterError):
        hm.export_mesh(result.convex_mesh, tmp_path / 'convex.stl')
