"""
Configuration settings for the reachability cloud toolkit
"""

import math
import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    """Base configuration class"""

    VERSION = '1.0.0'

    # Logging
    LOG_LEVEL = os.environ.get('REACHCLOUD_LOG_LEVEL', 'INFO')
    LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

    # Worker pool
    WORKERS = int(os.environ.get('REACHCLOUD_WORKERS', '1'))
    CHUNK_SIZE = 4096  # samples per vectorised batch; never tied to worker count

    # Cache for resumable atlas sweeps
    CACHE_DIR = os.environ.get('REACHCLOUD_CACHE_DIR', '.reachcloud_cache')

    # Activation sampling
    GAMMA_MIN = -5.0 / 3.0
    GAMMA_MAX = 0.0
    COLOR_GAMMA_REF = 5.0 / 3.0
    DEFAULT_SAMPLES = 400_000
    DEFAULT_SEED = 42
    SYMMETRY_TEST_POINTS = 1500
    SYMMETRY_TEST_PERMUTATIONS = 200
    SYMMETRY_SIGNIFICANCE = 0.01

    # Kinematics
    DEFAULT_STEPS = 200
    PHI_TOL = 1e-6  # rad, fiber-rotation series branch
    STATION_FRACTIONS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

    # Curvature statistics
    HISTOGRAM_BINS = 100
    CURVATURE_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

    # Hull metrics
    ALPHA_MULTIPLIERS = (4, 6, 8, 12, 16)
    DEFAULT_ALPHA_MULTIPLIER = 8
    ALPHA_VOXEL_TOLERANCE = 0.10
    VOXEL_RESOLUTION_FACTOR = 2.0  # voxel edge in units of the median NN distance
    VOXEL_CLOSING_ITERATIONS = 2  # 26-connected closing before hole filling

    # Redundancy
    REDUNDANCY_RADIUS = 1.0 / 60.0
    REDUNDANCY_SUBSET = 10_000
    REDUNDANCY_SEED = 7
    DISTANCE_COLORMAP = 'viridis'
    ACTIVATION_COLORMAP = 'plasma'  # single-bundle colouring
    ISOLATED_COLOR = (200, 200, 200)

    # Design defaults (units of L)
    OUTER_RADIUS = 1.0 / 16.0
    INNER_RADIUS = 3.0 / 64.0
    POISSON_RATIO = 0.5
    BUNDLE_EXTENT = math.radians(48.0)

    # Atlas grids
    ATLAS_OMEGA_MAX_DEG = 108.0
    ATLAS_PHI_MAX_DEG = 3.0
    ATLAS_FULL_GRID = 16
    ATLAS_DESK_GRID = 8
    ATLAS_DESK_SAMPLES = 50_000


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.environ.get('REACHCLOUD_LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Production configuration for long full-resolution runs"""
    LOG_LEVEL = os.environ.get('REACHCLOUD_LOG_LEVEL', 'INFO')
    WORKERS = int(os.environ.get('REACHCLOUD_WORKERS', str(os.cpu_count() or 1)))


class TestingConfig(Config):
    """Testing configuration"""
    LOG_LEVEL = 'WARNING'
    WORKERS = 1
    CHUNK_SIZE = 512
    DEFAULT_SAMPLES = 2_000
    ATLAS_DESK_SAMPLES = 2_000


# Configuration mapping
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': Config
}


def get_config(name=None):
    """Return the configuration class selected by name or REACHCLOUD_ENV"""
    name = name or os.environ.get('REACHCLOUD_ENV', 'default')
    return config.get(name, Config)
