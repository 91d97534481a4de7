"""
Tests for cloud generation: counter-based sampling, colouring, worker
independence, curvature statistics, persistence and the reflection test
"""

import dataclasses

import numpy as np
import pandas as pd
import pytest

import cloud_engine as ce
import rod_kinematics as rk
from design_presets import minimal_design
from exceptions import CloudFormatError, ParameterError
from models import ActivationState, SamplerConfig


# ============================================================================
# SAMPLING
# ============================================================================

def test_sampling_is_deterministic_and_bounded(minimal, small_sampler):
    first = ce.sample_activations(minimal, small_sampler)
    second = ce.sample_activations(minimal, small_sampler)
    assert first.shape == (1500, 3)
    assert np.array_equal(first, second)
    assert first.min() >= -5.0 / 3.0
    assert first.max() <= 0.0


def test_any_index_range_reproduces_the_same_samples(minimal, small_sampler):
    whole = ce.sample_activations(minimal, small_sampler)
    assert np.array_equal(ce.sample_activations(minimal, small_sampler, 700, 913), whole[700:913])
    assert np.array_equal(ce.sample_activation(minimal, small_sampler, 1234), whole[1234])


def test_chunked_stream_covers_every_sample(redundant, small_sampler):
    whole = ce.sample_activations(redundant, small_sampler)
    chunks = list(ce.activation_stream(redundant, small_sampler, chunk_size=400))
    assert [start for start, _ in chunks] == [0, 400, 800, 1200]
    assert np.array_equal(np.concatenate([c for _, c in chunks]), whole)


def test_seed_changes_the_samples(minimal, small_sampler):
    other = dataclasses.replace(small_sampler, seed=43)
    assert not np.array_equal(ce.sample_activations(minimal, small_sampler, 0, 10),
                              ce.sample_activations(minimal, other, 0, 10))


@pytest.mark.parametrize('changes', [
    {'n_samples': 0},
    {'gamma_min': 0.5},
    {'seed': -1},
    {'steps': 1}
])
def test_invalid_sampler(minimal, changes):
    with pytest.raises(ParameterError):
        ce.generate_cloud(minimal, SamplerConfig(**{'n_samples': 10, 'steps': 10, **changes}))


# ============================================================================
# COLOUR
# ============================================================================

def test_rgb_colour_rule(minimal):
    assert ce.color_map([-5.0 / 6.0] * 3, minimal) == (128, 128, 128)
    assert ce.color_map([0.0, 0.0, 0.0]) == (0, 0, 0)
    assert ce.color_map([-5.0 / 3.0, 0.0, -5.0 / 3.0]) == (255, 0, 255)


def test_rgb_uses_first_three_bundles():
    colors = ce.color_array(np.array([[-5.0 / 3.0, 0.0, 0.0, -1.0]]))
    assert tuple(colors[0]) == (255, 0, 0)
    assert tuple(ce.color_array(np.array([[-5.0 / 3.0]]))[0]) == (255, 0, 0)


def test_single_bundle_colormap():
    activations = np.array([[0.0, -1.0, 0.0], [-5.0 / 3.0, -1.0, 0.0]])
    colors = ce.color_array(activations, channel=0)
    assert colors.dtype == np.uint8
    assert not np.array_equal(colors[0], colors[1])
    with pytest.raises(ParameterError):
        ce.color_array(activations, channel=3)


def test_colour_length_mismatch(minimal):
    with pytest.raises(ParameterError):
        ce.color_map([-1.0, -1.0], minimal)


# ============================================================================
# GENERATION
# ============================================================================

def test_cloud_layout(small_cloud, minimal):
    assert len(small_cloud) == 1500
    assert small_cloud.positions.dtype == np.float64
    assert small_cloud.activations.dtype == np.float32
    assert small_cloud.colors.dtype == np.uint8
    assert small_cloud.design_digest == minimal.digest()
    assert small_cloud.metadata['length'] == 1.0
    assert small_cloud.warnings == []
    point = small_cloud[3]
    assert point.color == ce.color_map(point.activation)


def test_workers_do_not_change_the_cloud(minimal, small_sampler, small_cloud):
    parallel = ce.generate_cloud(minimal, small_sampler, workers=2)
    assert np.array_equal(parallel.positions, small_cloud.positions)
    assert np.array_equal(parallel.activations, small_cloud.activations)
    assert np.array_equal(parallel.colors, small_cloud.colors)


def test_stored_activation_reproduces_its_position(minimal, small_sampler, small_cloud):
    for k in (0, 511, 512, 1499):
        act = ActivationState.from_flat(minimal, small_cloud.activations[k])
        config = rk.integrate(minimal, act, small_sampler.steps)
        assert rk.end_effector(config) == pytest.approx(small_cloud.positions[k], abs=1e-12)


def test_cloud_stays_below_rest_length(small_cloud):
    assert np.all(np.linalg.norm(small_cloud.positions, axis=1) <= 1.0 + 1e-12)
    lower, upper = small_cloud.bounds
    assert np.all(lower <= upper)


def test_redundant_design_warns_about_rgb(redundant):
    cloud = ce.generate_cloud(redundant, SamplerConfig(n_samples=50, seed=1, steps=20), workers=1)
    assert cloud.activations.shape == (50, 4)
    assert any('RGB uses the first 3' in w for w in cloud.warnings)


# ============================================================================
# CURVATURE STATISTICS
# ============================================================================

def test_histograms_conserve_mass(minimal):
    sampler = SamplerConfig(n_samples=800, seed=5, steps=20)
    stats = ce.curvature_statistics(minimal, sampler, bins=25)
    assert sorted(stats) == pytest.approx([0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    for entry in stats.values():
        assert entry['counts'].sum() == 800
        assert len(entry['edges']) == 26
        assert entry['min'] <= entry['quantiles'][0.5] <= entry['max']

    histogram = ce.curvature_frame(stats)
    assert list(histogram.columns) == ['station', 'bin_lo', 'bin_hi', 'count']
    assert histogram.groupby('station')['count'].sum().eq(800).all()
    quantiles = ce.quantile_frame(stats)
    assert list(quantiles.columns) == ['station', 'min', 'mean', 'max', 'q05', 'q25', 'q50', 'q75', 'q95']


def test_taper_shifts_tip_curvature_upward():
    sampler = SamplerConfig(n_samples=1000, seed=9, steps=20)
    flat = ce.curvature_statistics(minimal_design(108.0, 0.0), sampler, stations=[1.0])
    tapered = ce.curvature_statistics(minimal_design(108.0, 3.0), sampler, stations=[1.0])
    assert tapered[1.0]['quantiles'][0.95] > flat[1.0]['quantiles'][0.95]


# ============================================================================
# PERSISTENCE
# ============================================================================

def test_cloud_file_round_trip(small_cloud, minimal, tmp_path):
    path = tmp_path / 'cloud.ply'
    ce.write_cloud(small_cloud, path)
    loaded = ce.read_cloud(path, expected_digest=minimal.digest())
    assert np.array_equal(loaded.positions, small_cloud.positions)
    assert np.array_equal(loaded.activations, small_cloud.activations)
    assert np.array_equal(loaded.colors, small_cloud.colors)
    assert loaded.sampler == small_cloud.sampler
    assert loaded.metadata == small_cloud.metadata
    assert loaded.warnings == []


def test_digest_mismatch_is_a_warning(small_cloud, tmp_path):
    path = tmp_path / 'cloud.ply'
    ce.write_cloud(small_cloud, path)
    loaded = ce.read_cloud(path, expected_digest='0' * 64)
    assert len(loaded) == len(small_cloud)
    assert any('digest mismatch' in w for w in loaded.warnings)


def test_truncated_cloud(small_cloud, tmp_path):
    path = tmp_path / 'cloud.ply'
    ce.write_cloud(small_cloud, path)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CloudFormatError) as err:
        ce.read_cloud(path)
    assert err.value.offset is not None


def test_cloud_csv(small_cloud, tmp_path):
    path = tmp_path / 'cloud.csv'
    ce.export_cloud_csv(small_cloud, path)
    frame = pd.read_csv(path, float_precision='round_trip')
    assert list(frame.columns) == ['x', 'y', 'z', 'gamma_0', 'gamma_1', 'gamma_2']
    assert np.array_equal(frame[['x', 'y', 'z']].to_numpy(), small_cloud.positions)


# ============================================================================
# SYMMETRY AND SLICES
# ============================================================================

def test_minimal_cloud_is_mirror_symmetric(small_cloud):
    result = ce.reflect_cloud_test(small_cloud, permutations=200)
    assert result['n_points'] == 1500
    assert result['passed']


def test_shifted_cloud_fails_reflection_test(small_cloud):
    shifted = small_cloud.positions + np.array([0.3, 0.0, 0.0])
    result = ce.reflect_cloud_test(shifted, permutations=200)
    assert not result['passed']
    assert result['p_value'] == pytest.approx(1.0 / 201.0)


def test_slices(small_cloud):
    slab = ce.cloud_slices(small_cloud, plane='yz', thickness=0.1)
    assert np.array_equal(slab['mask'], np.abs(small_cloud.positions[:, 0]) <= 0.05)
    assert slab['coords'].shape == (int(slab['mask'].sum()), 2)
    assert len(slab['colors']) == len(slab['coords'])
    with pytest.raises(ParameterError):
        ce.cloud_slices(small_cloud, plane='xy')


@pytest.mark.slow
def test_large_minimal_cloud_is_mirror_symmetric(minimal):
    cloud = ce.generate_cloud(minimal, SamplerConfig(n_samples=10_000, seed=42, steps=200))
    result = ce.reflect_cloud_test(cloud, max_points=4000, permutations=200, seed=1)
    assert result['passed']
