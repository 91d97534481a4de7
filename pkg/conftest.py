"""
Shared pytest fixtures: preset designs, small samplers and clouds, analytic
point sets
"""

import os

os.environ.setdefault('REACHCLOUD_ENV', 'testing')

import math

import numpy as np
import pytest

from cloud_engine import generate_cloud
from design_presets import minimal_design, redundant_design
from models import FiberArchitecture, ManipulatorDesign, SamplerConfig, TaperedGeometry


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run full-resolution checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-resolution check, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def minimal():
    """Minimal design at the largest revolution and a 2 degree taper"""
    return minimal_design(omega_deg=108.0, phi_deg=2.0)


@pytest.fixture(scope='session')
def straight_minimal():
    return minimal_design(omega_deg=0.0, phi_deg=0.0)


@pytest.fixture(scope='session')
def redundant():
    return redundant_design(omega_deg=108.0, phi_deg=2.0)


@pytest.fixture(scope='session')
def longitudinal():
    """One longitudinal bundle at 270 degrees on an untapered tube"""
    return ManipulatorDesign(
        geometry=TaperedGeometry(L=1.0, R2_0=1.0 / 16.0, R1_0=3.0 / 64.0, phi=0.0),
        nu=0.5,
        architectures=(FiberArchitecture(alpha=0.0, sigma=math.radians(48.0), theta0=math.radians(270.0)),),
        name='longitudinal'
    )


@pytest.fixture(scope='session')
def small_sampler():
    return SamplerConfig(n_samples=1500, seed=42, steps=40)


@pytest.fixture(scope='session')
def small_cloud(minimal, small_sampler):
    return generate_cloud(minimal, small_sampler, workers=1)


@pytest.fixture(scope='session')
def ball_points():
    """10^4 points uniform in the unit ball"""
    rng = np.random.default_rng(3)
    points = rng.uniform(-1.0, 1.0, size=(25_000, 3))
    points = points[np.linalg.norm(points, axis=1) <= 1.0]
    return points[:10_000]


@pytest.fixture
def cube_corners():
    return np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
