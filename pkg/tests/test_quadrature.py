import itertools
import math

import numpy as np
import pytest

from sobolevlab.errors import QuadratureError
from sobolevlab.quadrature import (
    conical_rule,
    default_rule,
    element_integrals,
    integrate_element,
    integrate_mesh,
    integrate_values,
    integrate_with_escalation,
    physical_points,
    simplex_monomial_integral,
)


def monomials(dim, degree):
    for exponents in itertools.product(range(degree + 1), repeat=dim):
        if sum(exponents) <= degree:
            yield exponents


@pytest.mark.parametrize('dim', [2, 3])
@pytest.mark.parametrize('order', [1, 2, 4, 6, 8])
def test_weights_sum_to_reference_volume(dim, order):
    rule = conical_rule(dim, order)
    assert math.fsum(rule.weights) == pytest.approx(1.0 / math.factorial(dim), rel=1e-14)
    assert np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(rule.points >= 0.0)


@pytest.mark.parametrize(('dim', 'order'), [(2, 3), (2, 8), (3, 4), (3, 6)])
def test_exact_for_total_degree(dim, order):
    rule = conical_rule(dim, order)
    coords = rule.points[:, 1:]
    for exponents in monomials(dim, order):
        approx = float(rule.weights @ np.prod(coords ** np.array(exponents), axis=1))
        assert approx == pytest.approx(simplex_monomial_integral(exponents), rel=1e-12, abs=1e-15)


def test_rules_are_cached():
    assert conical_rule(2, 8) is conical_rule(2, 8)
    assert default_rule(3) is conical_rule(3, 6)


@pytest.mark.parametrize(('dim', 'order'), [(1, 2), (4, 2), (2, -1)])
def test_invalid_rule(dim, order):
    with pytest.raises(QuadratureError):
        conical_rule(dim, order)


def test_rule_dimension_mismatch(hexagon):
    with pytest.raises(QuadratureError):
        physical_points(hexagon, conical_rule(3, 2))


def test_constant_integrates_to_volume(disk_meshes, ball_meshes):
    for mesh in (disk_meshes[3], ball_meshes[1]):
        value = integrate_mesh(lambda x: np.ones(len(x)), mesh, default_rule(mesh.dim))
        assert value == pytest.approx(float(mesh.volumes.sum()), rel=1e-13)


def test_odd_integrand_vanishes_on_symmetric_mesh(disk_meshes):
    value = integrate_mesh(lambda x: x[:, 0] ** 3 + x[:, 1], disk_meshes[2], default_rule(2))
    assert abs(value) < 1e-14


def test_polar_moment_of_hexagon(hexagon):
    # int |x|^2 over the regular hexagon with unit circumradius: 5 sqrt(3) / 8
    value = integrate_mesh(lambda x: np.einsum('ni,ni->n', x, x), hexagon, conical_rule(2, 2))
    assert value == pytest.approx(5.0 * math.sqrt(3.0) / 8.0, rel=1e-13)


def test_element_and_mesh_sums_agree(disk_meshes):
    mesh = disk_meshes[1]
    rule = conical_rule(2, 4)

    def f(x):
        return np.exp(x[:, 0]) * np.cos(x[:, 1])

    per_element = element_integrals(f, mesh, rule)
    assert per_element[3] == pytest.approx(integrate_element(f, mesh, 3, rule), rel=1e-14)
    assert math.fsum(per_element) == pytest.approx(integrate_mesh(f, mesh, rule), rel=1e-14)


def test_non_finite_values_rejected(hexagon):
    rule = conical_rule(2, 2)
    values = np.ones((hexagon.n_elements, rule.n_points))
    values[2, 1] = np.nan
    with pytest.raises(QuadratureError):
        integrate_values(values, hexagon, rule)


def test_escalation_accepts_polynomial(hexagon):
    result = integrate_with_escalation(
        lambda rule: integrate_mesh(lambda x: x[:, 0] ** 4, hexagon, rule), 2, 4
    )
    assert result.escalations == 0
    assert result.order == 4
    assert result.relative_change < 1e-12


def test_escalation_gives_up():
    with pytest.raises(QuadratureError):
        integrate_with_escalation(lambda rule: float(rule.order), 2, 4, max_order=16)
