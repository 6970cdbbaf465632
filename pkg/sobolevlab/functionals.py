"""
Integral functionals on P1 functions and extremal fields.

Pure P1 quantities (gradient p-norms) are exact element sums. Anything that
involves an extremal field is integrated over the mesh by quadrature; the
part outside the mesh is closed out with the whole-space identity
||DU_{c,lam,x0}||_p^p = |c|^p, never by truncating at a finite radius.
"""

import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from sobolevlab.errors import FunctionalError
from sobolevlab.extremals import ExtremalField, RadialProfile, sobolev_constant_ref
from sobolevlab.fespace import FeFunction, element_gradients, values_at
from sobolevlab.mesh import Mesh
from sobolevlab.quadrature import (
    CHUNK_ELEMENTS,
    QuadratureRule,
    default_rule,
    integrate_values,
    integrate_with_escalation,
    physical_points,
)
from utils.logging import get_logger

logger = get_logger(__name__)

Field = Union[FeFunction, ExtremalField]

BELOW_RESOLUTION = 1e-8


class WeightMode(str, Enum):
    """Which field carries the weight (|Dw| + |D(u-v)|)^(p-2) of the quasi-norm."""
    U_WEIGHT = "u"
    V_WEIGHT = "v"


class SplitIntegral(NamedTuple):
    """Integral over the mesh domain and over its complement."""
    interior: float
    exterior: float

    @property
    def total(self) -> float:
        return self.interior + self.exterior


@dataclass(frozen=True)
class DeficitReport:
    rayleigh: float
    deficit: float
    grad_p_norm_p: float
    lpstar_norm: float
    s_ref: float
    below_resolution: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _check_p(p: float, N: int):
    if not (1.0 < p < N):
        raise FunctionalError(f"Exponent p={p} outside (1, N={N})", {'p': p, 'dim': N})


def _rule_for(mesh: Mesh, rule: Optional[QuadratureRule]) -> QuadratureRule:
    return default_rule(mesh.dim) if rule is None else rule


def grad_p_norm_p(u: FeFunction, p: float) -> float:
    """||Du||_p^p = sum_T |T| |grad u_T|^p (exact for P1)."""
    _check_p(p, u.mesh.dim)
    norms = np.linalg.norm(element_gradients(u), axis=1)
    return math.fsum(u.mesh.volumes * norms ** p)


def _lpstar_integral(u: FeFunction, p_star: float, rule: QuadratureRule) -> float:
    return integrate_values(np.abs(values_at(u, rule)) ** p_star, u.mesh, rule)


def lpstar_norm(u: FeFunction, p: float, rule: Optional[QuadratureRule] = None,
                verify: bool = False, rtol: float = 1e-8) -> float:
    """(int_{B_h} |u|^{p*})^(1/p*) by mesh quadrature.

    With ``verify`` the order-doubling check runs and the order is escalated
    until two successive orders agree to ``rtol``.
    """
    N = u.mesh.dim
    _check_p(p, N)
    ps = N * p / (N - p)
    rule = _rule_for(u.mesh, rule)
    if verify:
        result = integrate_with_escalation(lambda r: _lpstar_integral(u, ps, r), N, rule.order, rtol)
        return result.value ** (1.0 / ps)
    return _lpstar_integral(u, ps, rule) ** (1.0 / ps)


def rayleigh(u: FeFunction, p: float, rule: Optional[QuadratureRule] = None) -> float:
    """||Du||_p / ||u||_{p*}."""
    if u.is_zero:
        raise FunctionalError("Rayleigh quotient of the zero function")
    return grad_p_norm_p(u, p) ** (1.0 / p) / lpstar_norm(u, p, rule)


def extremal_rayleigh(profile: RadialProfile, lam: float = 1.0) -> float:
    """Whole-space quotient of the centered extremal with concentration lam."""
    return profile.grad_norm_p(lam) ** (1.0 / profile.p) / profile.lpstar_norm_pstar(lam) ** (1.0 / profile.p_star)


def deficit_report(u: FeFunction, p: float, rule: Optional[QuadratureRule] = None) -> DeficitReport:
    """Rayleigh quotient and Sobolev deficit rayleigh - S(p, N)."""
    gp = grad_p_norm_p(u, p)
    norm = lpstar_norm(u, p, rule)
    if norm == 0.0:
        raise FunctionalError("Deficit of the zero function")
    quotient = gp ** (1.0 / p) / norm
    s_ref = sobolev_constant_ref(p, u.mesh.dim)
    deficit = quotient - s_ref
    return DeficitReport(float(quotient), float(deficit), float(gp), float(norm), float(s_ref),
                         bool(deficit < BELOW_RESOLUTION))


def _mesh_of(u: Field, v: Field, mesh: Optional[Mesh]) -> Mesh:
    for f in (u, v):
        if isinstance(f, FeFunction):
            return f.mesh
    if mesh is None:
        raise FunctionalError("A mesh is required when neither argument is a finite element function")
    return mesh


def integrate_gradient_density(density: Callable[[np.ndarray, np.ndarray], np.ndarray],
                               u: Field, v: Field, mesh: Mesh, rule: QuadratureRule) -> float:
    """int_{B_h} density(Du, Dv) where density maps gradient arrays (..., N) to values (...)."""
    fe_grads = {id(f): element_gradients(f) for f in (u, v) if isinstance(f, FeFunction)}
    w = rule.normalized_weights
    per_element = np.empty(mesh.n_elements)

    def grads(f, block, pts):
        if isinstance(f, FeFunction):
            return np.broadcast_to(fe_grads[id(f)][block][:, None, :], pts.shape)
        return f.gradient(pts.reshape(-1, mesh.dim)).reshape(pts.shape)

    for start in range(0, mesh.n_elements, CHUNK_ELEMENTS):
        block = np.arange(start, min(start + CHUNK_ELEMENTS, mesh.n_elements))
        pts = physical_points(mesh, rule, block)
        values = density(grads(u, block, pts), grads(v, block, pts))
        if not np.all(np.isfinite(values)):
            raise FunctionalError("Non-finite density at a quadrature node")
        per_element[block] = mesh.volumes[block] * (values @ w)
    return math.fsum(per_element)


def exterior_grad_p(v: ExtremalField, mesh: Mesh, rule: Optional[QuadratureRule] = None) -> float:
    """int outside B_h of |Dv|^p = |c|^p - int_{B_h} |Dv|^p."""
    rule = _rule_for(mesh, rule)
    p = v.profile.p
    inside = integrate_gradient_density(
        lambda gu, gv: np.linalg.norm(gv, axis=-1) ** p, v, v, mesh, rule
    )
    return max(abs(v.params.c) ** p - inside, 0.0)


def _weighted_sq(weight_norm: np.ndarray, diff_norm: np.ndarray, p: float) -> np.ndarray:
    # (|Dw| + |D(u-v)|)^(p-2) |D(u-v)|^2, with 0^(p-2) * 0 := 0
    base = weight_norm + diff_norm
    out = np.zeros_like(base)
    nz = base > 0
    out[nz] = base[nz] ** (p - 2.0) * diff_norm[nz] ** 2
    return out


def quasinorm_sq(u: Field, v: Field, p: float, weight_mode: WeightMode = WeightMode.U_WEIGHT,
                 rule: Optional[QuadratureRule] = None, mesh: Optional[Mesh] = None,
                 parts: bool = False) -> Union[float, SplitIntegral]:
    """int (|Dw| + |D(u-v)|)^(p-2) |D(u-v)|^2 with w = u or v.

    Args:
        u, v: Finite element functions or extremal fields
        p: Exponent, 1 < p < N
        weight_mode: U_WEIGHT or V_WEIGHT
        rule: Quadrature rule (dimension default if None)
        mesh: Needed only if neither field is a finite element function
        parts: Return the interior/exterior split

    Returns:
        Integral over R^N (finite element functions are zero outside B_h)

    Raises:
        FunctionalError: On p out of range, an invalid mode, or two extremal arguments
    """
    mesh = _mesh_of(u, v, mesh)
    _check_p(p, mesh.dim)
    try:
        mode = WeightMode(weight_mode)
    except ValueError as e:
        raise FunctionalError(f"Invalid weight mode: {weight_mode}") from e
    rule = _rule_for(mesh, rule)

    def density(gu, gv):
        diff = np.linalg.norm(gu - gv, axis=-1)
        weight = np.linalg.norm(gu if mode is WeightMode.U_WEIGHT else gv, axis=-1)
        return _weighted_sq(weight, diff, p)

    interior = integrate_gradient_density(density, u, v, mesh, rule)

    u_ext, v_ext = isinstance(u, ExtremalField), isinstance(v, ExtremalField)
    if u_ext and v_ext:
        raise FunctionalError("quasinorm_sq needs at least one finite element argument")
    if v_ext:
        # outside B_h: Du = 0, D(u-v) = -Dv
        kappa = 1.0 if mode is WeightMode.U_WEIGHT else 2.0 ** (p - 2.0)
        exterior = kappa * exterior_grad_p(v, mesh, rule)
    elif u_ext:
        kappa = 2.0 ** (p - 2.0) if mode is WeightMode.U_WEIGHT else 1.0
        exterior = kappa * exterior_grad_p(u, mesh, rule)
    else:
        exterior = 0.0

    result = SplitIntegral(interior, exterior)
    return result if parts else result.total


def mixed_term(u: FeFunction, v: ExtremalField, p: float,
               rule: Optional[QuadratureRule] = None,
               parts: bool = False) -> Union[float, SplitIntegral]:
    """int |Dv|^(p-1) |D(u-v)| for 1 < p < 2 (outside B_h the integrand is |Dv|^p)."""
    if p >= 2.0:
        raise FunctionalError(f"mixed_term is defined for 1 < p < 2, got p={p}")
    mesh = u.mesh
    _check_p(p, mesh.dim)
    rule = _rule_for(mesh, rule)

    def density(gu, gv):
        return np.linalg.norm(gv, axis=-1) ** (p - 1.0) * np.linalg.norm(gu - gv, axis=-1)

    result = SplitIntegral(
        integrate_gradient_density(density, u, v, mesh, rule),
        exterior_grad_p(v, mesh, rule),
    )
    return result if parts else result.total


def sobolev_distance_p(u: FeFunction, v: ExtremalField, p: float,
                       rule: Optional[QuadratureRule] = None,
                       parts: bool = False) -> Union[float, SplitIntegral]:
    """||Du - Dv||_{L^p(R^N)}^p."""
    mesh = u.mesh
    _check_p(p, mesh.dim)
    rule = _rule_for(mesh, rule)

    def density(gu, gv):
        return np.linalg.norm(gu - gv, axis=-1) ** p

    result = SplitIntegral(
        integrate_gradient_density(density, u, v, mesh, rule),
        exterior_grad_p(v, mesh, rule),
    )
    return result if parts else result.total
