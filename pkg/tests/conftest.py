"""Shared fixtures: small ball meshes, cached profiles and quadrature rules."""

import os
import tempfile

# log files of the test session go to a scratch directory
os.environ.setdefault('SOBOLEVLAB_LOG_DIR', tempfile.mkdtemp(prefix='sobolevlab-logs-'))

import numpy as np
import pytest

from sobolevlab.extremals import radial_profile
from sobolevlab.mesh import build_ball_mesh, coarse_ball_mesh
from sobolevlab.quadrature import conical_rule


@pytest.fixture(scope='session')
def hexagon():
    return coarse_ball_mesh(2)


@pytest.fixture(scope='session')
def octahedron():
    return coarse_ball_mesh(3)


@pytest.fixture(scope='session')
def disk_meshes():
    return {level: build_ball_mesh(2, level) for level in range(5)}


@pytest.fixture(scope='session')
def ball_meshes():
    return {level: build_ball_mesh(3, level) for level in range(3)}


@pytest.fixture(scope='session')
def profile_2d():
    return radial_profile(1.5, 2)


@pytest.fixture(scope='session')
def profile_3d():
    return radial_profile(2.0, 3)


@pytest.fixture(scope='session')
def rule4_2d():
    return conical_rule(2, 4)


@pytest.fixture(scope='session')
def rule4_3d():
    return conical_rule(3, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
