import json
import math

import numpy as np
import pytest

from sobolevlab.checks import (
    CheckReport,
    QuadraticField,
    check_deficit_sandwich,
    check_elementary_inequalities,
    check_gradient_lower_bound,
    check_hessian_bounds,
    check_interp_scalings,
    check_interpolation_decay,
    check_tail_scalings,
    direction_grid,
    gradient_bound_ratios,
    lower_bound_1d_constant,
)
from sobolevlab.errors import ConfigError
from sobolevlab.extremals import ExtremalField, ExtremalParams, hessian_envelope_a, radial_profile


@pytest.mark.parametrize('N', [2, 3])
def test_direction_grid(N):
    dirs = direction_grid(N)
    assert dirs.shape == ((64, 2) if N == 2 else (162, 3))
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert len(np.unique(np.round(dirs, 12), axis=0)) == len(dirs)


@pytest.mark.parametrize('p', [1.2, 1.5, 2.0, 3.0])
def test_one_dimensional_constant(p):
    assert lower_bound_1d_constant(p) == pytest.approx(0.5 ** p / (p + 1.0), rel=1e-8)


def test_one_dimensional_constant_p2():
    assert lower_bound_1d_constant(2.0) == pytest.approx(1.0 / 12.0, rel=1e-8)


def test_quadratic_ratio_on_equilateral_elements(hexagon):
    # polar moment sqrt(3)/48 over rho^4 = 1/9
    ratios = gradient_bound_ratios(QuadraticField(2), hexagon, 2.0)
    assert np.allclose(ratios, 3.0 * math.sqrt(3.0) / 16.0, rtol=1e-10)


@pytest.mark.parametrize('p', [1.5, 2.0])
def test_gradient_lower_bound_quadratic(disk_meshes, p):
    report = check_gradient_lower_bound(QuadraticField(2), disk_meshes[2], p)
    assert report.passed, report.notes
    assert report.constants['min_ratio'] > 0.0
    assert report.constants['min_ratio'] <= report.constants['max_ratio']
    assert report.samples == disk_meshes[2].n_elements


def test_gradient_lower_bound_quadratic_3d(ball_meshes):
    report = check_gradient_lower_bound(QuadraticField(3), ball_meshes[1], 2.0, compare_refined=False)
    assert report.passed, report.notes
    assert 'min_ratio_refined' not in report.constants


def test_gradient_lower_bound_extremal(disk_meshes, profile_2d):
    field_ = ExtremalField(ExtremalParams.centered(4.0, 2), profile_2d)
    report = check_gradient_lower_bound(field_, disk_meshes[3], 1.5, compare_refined=False)
    assert report.passed, report.notes
    assert report.constants['c_1d'] == pytest.approx(0.5 ** 1.5 / 2.5, rel=1e-8)


@pytest.mark.parametrize('q', [1.5, 2.0])
def test_inequalities_without_quadratic_term(q):
    report = check_elementary_inequalities(q, n_samples=10_000, seed=3)
    assert report.passed, report.notes
    assert report.constants['A1'] == 0.0
    assert report.constants['A2'] == 0.0
    assert math.isfinite(report.constants['C3'])


def test_inequalities_above_two():
    report = check_elementary_inequalities(3.0, n_samples=10_000)
    assert report.passed, report.notes
    assert report.constants['B1_at_A0'] > 1e4
    assert 0.0 < report.constants['A1'] < math.inf
    assert math.isfinite(report.constants['B2'])


def test_inequalities_are_seed_stable():
    first = check_elementary_inequalities(1.5, n_samples=10_000, seed=0)
    second = check_elementary_inequalities(1.5, n_samples=10_000, seed=1)
    assert first.passed == second.passed
    assert second.constants['C3'] == pytest.approx(first.constants['C3'], rel=0.1)


@pytest.mark.parametrize(('q', 'n'), [(1.0, 10_000), (6.5, 10_000), (2.0, 100)])
def test_inequality_arguments(q, n):
    with pytest.raises(ConfigError):
        check_elementary_inequalities(q, n_samples=n)


@pytest.mark.parametrize(('p', 'N'), [(1.5, 2), (2.0, 3)])
def test_tail_scalings(p, N):
    report = check_tail_scalings(p, N)
    assert report.passed, report.notes
    assert report.constants['tail_spread'] <= 1.5
    assert report.constants['outside_center_min_tail'] >= 0.5


@pytest.mark.parametrize(('p', 'N'), [(1.5, 2), (2.0, 3), (2.5, 3)])
def test_hessian_bounds(p, N):
    report = check_hessian_bounds(p, N, n_points=200)
    assert report.passed, report.notes
    assert report.constants['upper_C'] >= report.constants['direction_A'] > 0.0
    assert ('laplacian_A' in report.constants) == (p >= 2.0)
    if p >= 2.0:
        stated = report.constants['laplacian_A_stated']
        assert report.constants['laplacian_A'] >= stated
        assert report.constants['coordinate_A'] >= stated / N


def test_hessian_lower_constant_is_attained_far_out():
    # |Delta U| / a(r) decreases to K (p-2)(N-1)/(p-1) as r grows
    p, N = 2.5, 3
    profile = radial_profile(p, N)
    field_ = ExtremalField(ExtremalParams.centered(1.0, N), profile)
    stated = profile.K * (p - 2.0) * (N - 1.0) / (p - 1.0)
    x = np.array([[r, 0.0, 0.0] for r in (1.0, 10.0, 1000.0)])
    ratios = np.abs(np.trace(field_.hessian(x), axis1=1, axis2=2)) / hessian_envelope_a(x[:, 0], p, N)
    assert np.all(ratios >= stated)
    assert np.all(np.diff(ratios) < 0.0)
    assert ratios[-1] == pytest.approx(stated, rel=1e-3)


def test_interpolation_decay():
    report = check_interpolation_decay(1.5, 2, levels=(2, 3, 4))
    assert report.passed, report.notes
    assert report.constants['slope_s0'] > 1.75
    assert report.constants['slope_s1'] > 0.75


def test_report_record():
    report = CheckReport('demo', 'anchor', True, constants={'b': 2.0, 'a': 1.0}, samples=5, params={'p': 1.5})
    report.fail('broken')
    record = report.to_record()
    assert record['passed'] is False
    assert json.loads(record['constants']) == {'a': 1.0, 'b': 2.0}
    assert record['constants'].index('"a"') < record['constants'].index('"b"')
    assert record['notes'] == 'broken'


@pytest.mark.slow
@pytest.mark.parametrize(('p', 'N'), [(1.5, 2)])
def test_interp_scalings(p, N):
    report = check_interp_scalings(p, N)
    assert report.passed, report.notes
    assert report.constants['d1_h_slope'] == pytest.approx(p, rel=0.15)
    assert report.constants['d1_lambda_slope'] == pytest.approx(-p / (p - 1.0), rel=0.15)
    beta = p / (N - p)
    assert report.constants['d1_lambda_interior_slope'] == pytest.approx(beta * p, rel=0.15)
    assert report.constants['d2_lambda_interior_slope'] == pytest.approx(2.0 * beta, rel=0.15)


@pytest.mark.slow
def test_deficit_sandwich_check():
    report = check_deficit_sandwich(1.5, 2, levels=(3, 4))
    assert not any('negative deficit' in note for note in report.notes)
    assert 'level_3' in report.constants and 'level_4' in report.constants
