"""
Conical-product (collapsed Gauss-Jacobi) quadrature on simplices.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from sobolevlab.errors import QuadratureError
from sobolevlab.mesh import Mesh
from utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_ORDER = {2: 8, 3: 6}
MAX_ORDER = 40
# elements per vectorized block when mapping quadrature nodes
CHUNK_ELEMENTS = 20000

PointFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Rule on the reference simplex.

    ``points`` are barycentric coordinates (n_points, N+1); ``weights`` sum
    to the reference volume 1/N!.
    """

    dim: int
    order: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.weights)

    @property
    def normalized_weights(self) -> np.ndarray:
        """Weights scaled to sum to one, so that the element integral is |T| * sum(w f)."""
        return self.weights * math.factorial(self.dim)


def _gauss_jacobi_01(n: int, alpha: int):
    """Gauss-Jacobi nodes on [0, 1] for the weight (1-s)^alpha; weights integrate that weight."""
    if alpha == 0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, alpha, 0)
    return (x + 1) / 2, w / 2 ** (alpha + 1)


@lru_cache(maxsize=None)
def conical_rule(dim: int, order: int) -> QuadratureRule:
    """Collapsed-coordinate product rule exact for total degree ``order``.

    Args:
        dim: 2 (triangle) or 3 (tetrahedron)
        order: Algebraic exactness degree (>= 0)

    Returns:
        Cached QuadratureRule with (ceil((order+1)/2))^dim points
    """
    if dim not in (2, 3):
        raise QuadratureError(f"No simplex rule for dimension {dim}")
    if order < 0:
        raise QuadratureError(f"Quadrature order must be >= 0, got {order}")

    n = max(1, math.ceil((order + 1) / 2))
    if dim == 2:
        s, ws = _gauss_jacobi_01(n, 1)
        t, wt = _gauss_jacobi_01(n, 0)
        S, T = np.meshgrid(s, t, indexing='ij')
        x = S.ravel()
        y = ((1 - S) * T).ravel()
        weights = np.outer(ws, wt).ravel()
        coords = np.column_stack([x, y])
    else:
        s, ws = _gauss_jacobi_01(n, 2)
        t, wt = _gauss_jacobi_01(n, 1)
        u, wu = _gauss_jacobi_01(n, 0)
        S, T, U = np.meshgrid(s, t, u, indexing='ij')
        x = S.ravel()
        y = ((1 - S) * T).ravel()
        z = ((1 - S) * (1 - T) * U).ravel()
        weights = np.einsum('i,j,k->ijk', ws, wt, wu).ravel()
        coords = np.column_stack([x, y, z])

    points = np.column_stack([1.0 - coords.sum(axis=1), coords])
    points = np.clip(points, 0.0, 1.0)
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(dim, order, points, weights)


def default_rule(dim: int) -> QuadratureRule:
    return conical_rule(dim, DEFAULT_ORDER[dim])


def simplex_monomial_integral(exponents: Sequence[int]) -> float:
    """Exact integral of prod x_i^a_i over the reference simplex: prod a_i! / (sum a + N)!."""
    num = math.prod(math.factorial(a) for a in exponents)
    return num / math.factorial(sum(exponents) + len(exponents))


def physical_points(mesh: Mesh, rule: QuadratureRule, elements=None) -> np.ndarray:
    """Quadrature nodes mapped to the mesh, shape (n_elements, n_points, N)."""
    if rule.dim != mesh.dim:
        raise QuadratureError(f"Rule dimension {rule.dim} does not match mesh dimension {mesh.dim}")
    idx = mesh.elements if elements is None else mesh.elements[elements]
    return np.einsum('qi,eik->eqk', rule.points, mesh.vertices[idx])


def _check_finite(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise QuadratureError("Non-finite integrand value at a quadrature node")


def integrate_values(values: np.ndarray, mesh: Mesh, rule: QuadratureRule) -> float:
    """Integrate precomputed node values of shape (n_elements, n_points)."""
    _check_finite(values)
    per_element = mesh.volumes * (values @ rule.normalized_weights)
    return math.fsum(per_element)


def element_integrals(f: PointFunction, mesh: Mesh, rule: QuadratureRule) -> np.ndarray:
    """Per-element integrals of a point function, evaluated in element blocks."""
    out = np.empty(mesh.n_elements)
    w = rule.normalized_weights
    for start in range(0, mesh.n_elements, CHUNK_ELEMENTS):
        block = np.arange(start, min(start + CHUNK_ELEMENTS, mesh.n_elements))
        pts = physical_points(mesh, rule, block)
        values = np.asarray(f(pts.reshape(-1, mesh.dim)), dtype=float).reshape(len(block), rule.n_points)
        _check_finite(values)
        out[block] = mesh.volumes[block] * (values @ w)
    return out


def integrate_element(f: PointFunction, mesh: Mesh, elem: int, rule: QuadratureRule) -> float:
    """sum_i w_i |T| f(x_i) over one element."""
    pts = physical_points(mesh, rule, [elem])[0]
    values = np.asarray(f(pts), dtype=float)
    _check_finite(values)
    return float(mesh.volumes[elem] * math.fsum(rule.normalized_weights * values))


def integrate_mesh(f: PointFunction, mesh: Mesh, rule: QuadratureRule) -> float:
    """Sum of element integrals in element order with compensated summation."""
    return math.fsum(element_integrals(f, mesh, rule))


class EscalatedIntegral(NamedTuple):
    value: float
    order: int
    escalations: int
    relative_change: float


def integrate_with_escalation(integrand: Callable[[QuadratureRule], float], dim: int,
                              order: int, rtol: float = 1e-8,
                              max_order: int = MAX_ORDER) -> EscalatedIntegral:
    """Order-doubling check: accept order q once |I(q) - I(2q)| <= rtol |I(2q)|.

    Args:
        integrand: Maps a rule to the integral value computed with it
        dim: Simplex dimension
        order: Starting order
        rtol: Relative agreement required between order q and 2q
        max_order: Escalation stops with an error beyond this order

    Returns:
        EscalatedIntegral with the accepted (order q) value

    Raises:
        QuadratureError: If agreement is not reached by ``max_order``
    """
    q = order
    escalations = 0
    current = integrand(conical_rule(dim, q))
    while True:
        doubled = integrand(conical_rule(dim, 2 * q))
        change = abs(current - doubled) / abs(doubled) if doubled != 0 else abs(current)
        if change <= rtol:
            if escalations:
                logger.info(f"Quadrature escalated to order {q} (relative change {change:.2e})")
            return EscalatedIntegral(current, q, escalations, change)
        if 2 * q > max_order:
            raise QuadratureError(
                f"Order-doubling check failed up to order {2 * q}",
                {'relative_change': change, 'order': q}
            )
        q *= 2
        escalations += 1
        current = doubled
