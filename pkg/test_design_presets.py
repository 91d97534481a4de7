"""
Tests for preset designs and design-file parsing
"""

import json
import math

import pytest

import design_presets as dp
from exceptions import ConfigFileError, DesignValidationError
from filament_model import fiber_rotation, validate_design


def test_minimal_preset_layout():
    design = dp.minimal_design(omega_deg=108.0, phi_deg=2.0)
    assert design.name == 'minimal'
    assert design.bundle_counts == [1, 1, 1]
    alphas = [a.alpha for a in design.architectures]
    assert alphas[0] == -alphas[1]
    assert alphas[2] == 0.0
    assert [round(math.degrees(a.theta0)) for a in design.architectures] == [66, 114, 270]
    assert fiber_rotation(design.geometry, alphas[1], 1.0) == pytest.approx(math.radians(108.0), rel=1e-12)
    assert validate_design(design) == []


def test_redundant_preset_splits_the_longitudinal_fiber():
    design = dp.redundant_design(omega_deg=72.0)
    assert design.total_bundles == 4
    halves = design.architectures[2:]
    assert [math.degrees(a.sigma) for a in halves] == pytest.approx([24.0, 24.0])
    assert [math.degrees(a.theta0) for a in halves] == pytest.approx([258.0, 282.0])
    assert validate_design(design) == []


def test_presets_scale_with_length():
    design = dp.preset_design('minimal', 54.0, 1.0, L=2.0)
    assert design.geometry.R2_0 == pytest.approx(2.0 / 16.0)
    assert design.geometry.tip_scale == pytest.approx(dp.minimal_design(54.0, 1.0).geometry.tip_scale)


def test_unknown_preset():
    with pytest.raises(ConfigFileError) as err:
        dp.preset_design('maximal')
    assert err.value.field == 'preset'


def test_toml_preset_file(tmp_path):
    path = tmp_path / 'design.toml'
    path.write_text('preset = "minimal"\nomega_deg = 108\nphi_deg = 3\n')
    design = dp.parse_design(path)
    assert design == dp.minimal_design(108.0, 3.0)


def test_toml_explicit_file(tmp_path):
    path = tmp_path / 'design.toml'
    path.write_text(
        'name = "tapered"\n'
        'nu = 0.45\n'
        '\n'
        '[geometry]\n'
        'phi_deg = 2.0\n'
        '\n'
        '[[architectures]]\n'
        'omega_deg = -90\n'
        'theta0_deg = 66\n'
        '\n'
        '[[architectures]]\n'
        'alpha_deg = 0\n'
        'sigma_deg = 30\n'
        'theta0_deg = 0\n'
        'n = 3\n'
    )
    design = dp.parse_design(path)
    assert design.name == 'tapered'
    assert design.nu == 0.45
    assert design.bundle_counts == [1, 3]
    helix = design.architectures[0]
    assert helix.alpha < 0
    assert fiber_rotation(design.geometry, helix.alpha, 1.0) == pytest.approx(-math.radians(90.0), rel=1e-12)
    assert math.degrees(helix.sigma) == pytest.approx(48.0)


def test_json_round_trip_of_file_dict(tmp_path):
    design = dp.redundant_design(108.0, 2.0)
    path = tmp_path / 'design.json'
    path.write_text(json.dumps(dp.design_to_file_dict(design), indent=2))
    loaded = dp.parse_design(path)
    assert loaded.name == 'redundant'
    assert loaded.geometry.phi == pytest.approx(design.geometry.phi, rel=1e-12)
    for a, b in zip(loaded.architectures, design.architectures):
        assert (a.alpha, a.sigma, a.theta0, a.n) == pytest.approx((b.alpha, b.sigma, b.theta0, b.n), rel=1e-12)


def test_json_syntax_error_reports_line(tmp_path):
    path = tmp_path / 'design.json'
    path.write_text('{\n  "preset": "minimal",\n  "omega_deg": ,\n}\n')
    with pytest.raises(ConfigFileError) as err:
        dp.parse_design(path)
    assert err.value.line == 3


def test_toml_syntax_error_reports_line(tmp_path):
    path = tmp_path / 'design.toml'
    path.write_text('preset = "minimal"\nomega_deg = = 3\n')
    with pytest.raises(ConfigFileError) as err:
        dp.parse_design(path)
    assert err.value.line == 2


def test_schema_error_names_field_and_line(tmp_path):
    path = tmp_path / 'design.toml'
    path.write_text(
        'nu = 0.5\n'
        '\n'
        '[[architectures]]\n'
        'sigma_deg = 48\n'
        'theta0_deg = "north"\n'
    )
    with pytest.raises(ConfigFileError) as err:
        dp.parse_design(path)
    assert err.value.field == 'architectures.0.theta0_deg'
    assert err.value.line == 5


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / 'design.toml'
    path.write_text('preset = "minimal"\ncolour = "red"\n')
    with pytest.raises(ConfigFileError) as err:
        dp.parse_design(path)
    assert err.value.field == 'colour'
    assert err.value.line == 2


def test_helix_given_twice(tmp_path):
    path = tmp_path / 'design.json'
    path.write_text(json.dumps({'architectures': [{'alpha_deg': 3, 'omega_deg': 50, 'theta0_deg': 0}]}))
    with pytest.raises(ConfigFileError):
        dp.parse_design(path)


def test_overlapping_bundles_fail_validation(tmp_path):
    path = tmp_path / 'design.json'
    path.write_text(json.dumps({'architectures': [{'sigma_deg': 100, 'theta0_deg': 0, 'n': 4}]}))
    with pytest.raises(DesignValidationError) as err:
        dp.parse_design(path)
    assert any('bundles overlap' in v for v in err.value.violations)


def test_over_tapered_preset_fails_validation(tmp_path):
    path = tmp_path / 'design.toml'
    path.write_text('preset = "minimal"\nomega_deg = 108\nphi_deg = 4\n')
    with pytest.raises(DesignValidationError) as err:
        dp.parse_design(path)
    assert any('tip radius nonpositive' in v for v in err.value.violations)


def test_unsupported_suffix(tmp_path):
    path = tmp_path / 'design.yaml'
    path.write_text('preset: minimal\n')
    with pytest.raises(ConfigFileError):
        dp.parse_design(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigFileError):
        dp.parse_design(tmp_path / 'absent.toml')
