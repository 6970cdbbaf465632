from pathlib import Path

import pytest
from pydantic import ValidationError

from sobolevlab.config import SolverOptions, load_settings
from sobolevlab.errors import ConfigError


def test_defaults():
    settings = load_settings(environ={})
    assert settings.out_dir == Path('results')
    assert settings.dim is None and settings.p is None
    assert settings.fit_min_level == 2
    assert settings.jobs == 1


def test_environment_values():
    settings = load_settings(environ={'SOBOLEVLAB_DIM': '3', 'SOBOLEVLAB_MAX_ITERS': '50',
                                      'SOBOLEVLAB_UNRELATED': 'x', 'HOME': '/root'})
    assert settings.dim == 3
    assert settings.max_iters == 50


def test_precedence(tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('dim = 2\nlevel = 3\nmax-iters = 80\n')
    env = {'SOBOLEVLAB_DIM': '3', 'SOBOLEVLAB_SEED': '5'}
    settings = load_settings(config, environ=env)
    assert settings.dim == 2
    assert settings.level == 3
    assert settings.max_iters == 80
    assert settings.seed == 5
    settings = load_settings(config, {'level': 1, 'dim': None}, environ=env)
    assert settings.level == 1
    assert settings.dim == 2


def test_unknown_key(tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('dimension = 2\n')
    with pytest.raises(ConfigError, match='Unknown config key'):
        load_settings(config, environ={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / 'absent.cfg', environ={})


@pytest.mark.parametrize('overrides', [{'dim': 4}, {'p': 0.5}, {'jobs': 0}, {'log_level': 'LOUD'}])
def test_invalid_values(overrides):
    with pytest.raises(ConfigError) as excinfo:
        load_settings(overrides=overrides, environ={})
    assert excinfo.value.exit_code == 2
    assert 'errors' in excinfo.value.details


def test_solver_options_per_dimension():
    settings = load_settings(overrides={'order_2d': 10, 'max_iters': 123}, environ={})
    assert settings.solver_options(2).quadrature_order == 10
    assert settings.solver_options(3).quadrature_order == 6
    opts = settings.solver_options(2, max_iters=7, grad_tol=None)
    assert opts.max_iters == 7
    assert opts.grad_tol == settings.grad_tol
    with pytest.raises(ConfigError):
        settings.solver_options(2, max_iters=0)


@pytest.mark.parametrize('schedule', [[], [1e-3, 1e-2], [1e-2, 1e-2], [1e-2, 1e-12]])
def test_epsilon_schedule(schedule):
    with pytest.raises(ValidationError):
        SolverOptions(epsilon_schedule=schedule)


def test_default_orders():
    opts = SolverOptions()
    assert opts.order_for(2) == 8
    assert opts.order_for(3) == 6
    assert SolverOptions(quadrature_order=4).order_for(3) == 4
