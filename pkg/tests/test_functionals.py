import math

import numpy as np
import pytest

from sobolevlab.errors import FunctionalError
from sobolevlab.extremals import ExtremalField, ExtremalParams, sobolev_constant_ref, tail_integral_p
from sobolevlab.fespace import FeFunction, interpolate_shifted
from sobolevlab.functionals import (
    SplitIntegral,
    WeightMode,
    deficit_report,
    exterior_grad_p,
    extremal_rayleigh,
    grad_p_norm_p,
    lpstar_norm,
    mixed_term,
    quasinorm_sq,
    rayleigh,
    sobolev_distance_p,
)
from sobolevlab.quadrature import conical_rule


@pytest.fixture(scope='module')
def hat(hexagon):
    coeffs = np.zeros(hexagon.n_vertices)
    coeffs[0] = 1.0
    return FeFunction(hexagon, coeffs)


def test_hat_gradient_norm(hat):
    # six unit equilateral triangles, |grad| = 2/sqrt(3)
    for p in (1.2, 1.5, 1.9):
        expected = 6.0 * math.sqrt(3.0) / 4.0 * (2.0 / math.sqrt(3.0)) ** p
        assert grad_p_norm_p(hat, p) == pytest.approx(expected, rel=1e-13)


def test_hat_lpstar_norm(hat):
    # p = 1.5 in the plane gives p* = 6; int_T lambda^6 = |T| 2 / (7 * 8)
    expected = (6.0 * math.sqrt(3.0) / 4.0 * 2.0 / 56.0) ** (1.0 / 6.0)
    assert lpstar_norm(hat, 1.5) == pytest.approx(expected, rel=1e-12)
    assert lpstar_norm(hat, 1.5, verify=True) == pytest.approx(expected, rel=1e-12)


def test_rayleigh_is_scale_invariant(hat):
    assert rayleigh(3.0 * hat, 1.5) == pytest.approx(rayleigh(hat, 1.5), rel=1e-13)
    assert rayleigh(-1.0 * hat, 1.5) == pytest.approx(rayleigh(hat, 1.5), rel=1e-13)


def test_rayleigh_of_zero(hexagon):
    with pytest.raises(FunctionalError):
        rayleigh(FeFunction(hexagon, np.zeros(hexagon.n_vertices)), 1.5)


def test_exponent_range(hat):
    with pytest.raises(FunctionalError):
        grad_p_norm_p(hat, 2.0)
    with pytest.raises(FunctionalError):
        lpstar_norm(hat, 1.0)


def test_sobolev_inequality_holds_on_mesh(hat, disk_meshes, profile_2d):
    report = deficit_report(hat, 1.5)
    assert report.deficit > 0.0
    assert not report.below_resolution
    assert report.s_ref == pytest.approx(sobolev_constant_ref(1.5, 2))
    u = interpolate_shifted(ExtremalField(ExtremalParams.centered(1.0, 2), profile_2d), disk_meshes[4])
    assert deficit_report(u, 1.5).deficit > 0.0
    assert set(report.to_dict()) == {'rayleigh', 'deficit', 'grad_p_norm_p', 'lpstar_norm', 's_ref',
                                     'below_resolution'}


def test_deficit_report_holds_plain_python_values(hat):
    record = deficit_report(hat, 1.5).to_dict()
    assert record['below_resolution'] is False
    assert all(type(record[key]) is float for key in record if key != 'below_resolution')


def test_extremal_attains_the_constant(profile_2d, profile_3d):
    for profile in (profile_2d, profile_3d):
        assert extremal_rayleigh(profile, 2.0) == pytest.approx(
            sobolev_constant_ref(profile.p, profile.N), rel=1e-7)


def test_quasinorm_of_identical_functions(hat):
    for mode in WeightMode:
        assert quasinorm_sq(hat, hat, 1.5, mode) == 0.0


def test_quasinorm_is_dirichlet_distance_at_p2(ball_meshes, profile_3d, rule4_3d):
    mesh = ball_meshes[1]
    v = ExtremalField(ExtremalParams(1.0, 1.5, (0.1, 0.0, 0.0)), profile_3d)
    u = interpolate_shifted(v, mesh)
    distance = sobolev_distance_p(u, v, 2.0, rule4_3d)
    for mode in WeightMode:
        assert quasinorm_sq(u, v, 2.0, mode, rule4_3d) == pytest.approx(distance, rel=1e-12)


def test_quasinorm_weights_and_exterior(disk_meshes, profile_2d, rule4_2d):
    mesh = disk_meshes[3]
    v = ExtremalField(ExtremalParams.centered(1.0, 2), profile_2d)
    u = interpolate_shifted(v, mesh)
    outside = exterior_grad_p(v, mesh, rule4_2d)
    by_u = quasinorm_sq(u, v, 1.5, WeightMode.U_WEIGHT, rule4_2d, parts=True)
    by_v = quasinorm_sq(u, v, 1.5, 'v', rule4_2d, parts=True)
    assert isinstance(by_u, SplitIntegral)
    assert by_u.exterior == pytest.approx(outside, rel=1e-14)
    assert by_v.exterior == pytest.approx(2.0 ** -0.5 * outside, rel=1e-14)
    # swapping the arguments swaps the exterior weights
    swapped = quasinorm_sq(v, u, 1.5, WeightMode.V_WEIGHT, rule4_2d, parts=True)
    assert swapped.exterior == pytest.approx(outside, rel=1e-14)
    assert swapped.interior == pytest.approx(by_u.interior, rel=1e-12)


def test_exterior_matches_tail_on_fine_mesh(disk_meshes, profile_2d):
    params = ExtremalParams.centered(1.0, 2)
    v = ExtremalField(params, profile_2d)
    outside = exterior_grad_p(v, disk_meshes[4])
    tail = tail_integral_p(params, profile_2d)
    # the mesh domain is inside the unit ball
    assert outside >= tail * (1.0 - 1e-8)
    assert outside == pytest.approx(tail, rel=0.05)


def test_distance_parts(disk_meshes, profile_2d, rule4_2d):
    mesh = disk_meshes[3]
    v = ExtremalField(ExtremalParams.centered(1.0, 2), profile_2d)
    u = interpolate_shifted(v, mesh)
    parts = sobolev_distance_p(u, v, 1.5, rule4_2d, parts=True)
    assert parts.interior > 0.0 and parts.exterior > 0.0
    assert sobolev_distance_p(u, v, 1.5, rule4_2d) == pytest.approx(parts.total, rel=1e-15)
    mixed = mixed_term(u, v, 1.5, rule4_2d, parts=True)
    assert mixed.exterior == pytest.approx(parts.exterior, rel=1e-14)
    assert mixed.interior > 0.0


def test_argument_errors(hat, profile_2d, profile_3d, ball_meshes, hexagon):
    v2 = ExtremalField(ExtremalParams.centered(1.0, 2), profile_2d)
    with pytest.raises(FunctionalError):
        quasinorm_sq(hat, v2, 1.5, 'w')
    with pytest.raises(FunctionalError):
        quasinorm_sq(v2, v2, 1.5, mesh=hexagon)
    with pytest.raises(FunctionalError):
        quasinorm_sq(v2, v2, 1.5)
    u3 = interpolate_shifted(ExtremalField(ExtremalParams.centered(1.0, 3), profile_3d), ball_meshes[1])
    v3 = ExtremalField(ExtremalParams.centered(1.0, 3), profile_3d)
    with pytest.raises(FunctionalError):
        mixed_term(u3, v3, 2.0)
