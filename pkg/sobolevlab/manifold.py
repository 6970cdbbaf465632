"""
Nearest-extremal projection and deficit-sandwich diagnostics.

Fits (c, lam, x0) of U_{c,lam,x0} to a finite element function by
Nelder-Mead search in the scaled coordinates (c/c0, log lam, x0).
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy.optimize import minimize

from sobolevlab.errors import FitError
from sobolevlab.extremals import (
    ExtremalField,
    ExtremalParams,
    LambdaMode,
    optimal_lambda,
    radial_profile,
)
from sobolevlab.fespace import FeFunction
from sobolevlab.functionals import (
    WeightMode,
    deficit_report,
    grad_p_norm_p,
    mixed_term,
    quasinorm_sq,
    sobolev_distance_p,
)
from sobolevlab.quadrature import QuadratureRule
from utils.logging import get_logger, log_execution_time

logger = get_logger(__name__)

LAMBDA_FLOOR = 1.0 / 16.0
SIMPLEX_XATOL = 1e-6
PENALTY_WEIGHT = 1e3
OUT_OF_REGIME = 0.5
MAX_EVALS_PER_START = 800


class Metric(str, Enum):
    SOBOLEV_P = "sobolev_p"
    QUASI = "quasi"


@dataclass
class FitResult:
    params: ExtremalParams
    distance: float
    metric: Metric
    evaluations: int
    converged: bool
    relative_distance: float = math.nan
    restarts: int = 0

    @property
    def out_of_regime(self) -> bool:
        return self.relative_distance > OUT_OF_REGIME

    def to_record(self) -> dict:
        return {
            'c': self.params.c,
            'lambda': self.params.lam,
            'x0': list(self.params.x0),
            'distance': self.distance,
            'relative_distance': self.relative_distance,
            'metric': self.metric.value,
            'evaluations': self.evaluations,
            'converged': self.converged,
            'restarts': self.restarts,
            'out_of_regime': self.out_of_regime,
        }


@dataclass
class SandwichReport:
    """Lower expression, deficit and upper expression with their ratios."""

    lower_expr: float
    deficit: float
    upper_expr: float
    lower_ratio: Optional[float]
    upper_ratio: Optional[float]
    below_resolution: bool
    out_of_regime: bool
    notes: List[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            'lower_expr': self.lower_expr,
            'deficit': self.deficit,
            'upper_expr': self.upper_expr,
            'lower_ratio': self.lower_ratio,
            'upper_ratio': self.upper_ratio,
            'below_resolution': self.below_resolution,
            'out_of_regime': self.out_of_regime,
            'notes': '; '.join(self.notes),
        }


def _metric_value(u: FeFunction, v: ExtremalField, p: float, metric: Metric,
                  rule: Optional[QuadratureRule]) -> float:
    if metric is Metric.SOBOLEV_P:
        return sobolev_distance_p(u, v, p, rule)
    return quasinorm_sq(u, v, p, WeightMode.U_WEIGHT, rule)


def _sign(u: FeFunction) -> float:
    i = int(np.argmax(np.abs(u.coeffs)))
    return 1.0 if u.coeffs[i] >= 0 else -1.0


@log_execution_time()
def nearest_extremal(u: FeFunction, p: float, metric: Metric = Metric.SOBOLEV_P,
                     rule: Optional[QuadratureRule] = None, restarts: bool = True,
                     max_evals: int = MAX_EVALS_PER_START) -> FitResult:
    """Fit the extremal closest to u in the chosen metric.

    Args:
        u: Nonzero finite element function
        p: Exponent
        metric: SOBOLEV_P (||Du - Dv||_p^p) or QUASI (quasi-norm, weight on u)
        rule: Quadrature rule (dimension default if None)
        restarts: Also start from lam*/4 and 4 lam* and keep the best
        max_evals: Objective evaluations per start

    Returns:
        FitResult for the best start; ``converged`` is that start's flag

    Raises:
        FitError: If u is zero
    """
    if u.is_zero:
        raise FitError("Cannot fit an extremal to the zero function")
    metric = Metric(metric)
    mesh = u.mesh
    N = mesh.dim
    profile = radial_profile(p, N)

    grad_norm = grad_p_norm_p(u, p) ** (1.0 / p)
    c0 = _sign(u) * grad_norm
    lam_star = optimal_lambda(min(mesh.h, 0.5), p, N, LambdaMode.QUASI)
    radius_cap = 1.0 - mesh.h
    scale_p = grad_norm ** p
    evaluations = 0

    def unpack(theta):
        return c0 * theta[0], math.exp(theta[1]), np.asarray(theta[2:])

    def objective(theta):
        nonlocal evaluations
        evaluations += 1
        c, lam, x0 = unpack(theta)
        penalty = 0.0
        r = float(np.linalg.norm(x0))
        if r >= radius_cap:
            penalty += (r - radius_cap + 1e-3) ** 2
            x0 = x0 * (radius_cap * (1.0 - 1e-9) / r)
        if lam <= LAMBDA_FLOOR:
            penalty += (math.log(LAMBDA_FLOOR) - math.log(lam) + 1e-3) ** 2
            lam = LAMBDA_FLOOR
        v = ExtremalField(ExtremalParams(c, lam, tuple(x0)), profile)
        return _metric_value(u, v, p, metric, rule) + PENALTY_WEIGHT * scale_p * penalty

    starts = [lam_star] + ([lam_star / 4.0, 4.0 * lam_star] if restarts else [])
    best = None
    for lam0 in starts:
        theta0 = np.concatenate([[1.0, math.log(lam0)], np.zeros(N)])
        simplex = np.tile(theta0, (N + 3, 1))
        steps = [0.05, 0.2] + [min(0.05, 0.5 * radius_cap)] * N
        for k, step in enumerate(steps):
            simplex[k + 1, k] += step
        res = minimize(
            objective, theta0, method='Nelder-Mead',
            options={
                'initial_simplex': simplex,
                'xatol': SIMPLEX_XATOL,
                'fatol': 1e-14 * scale_p,
                'maxfev': max_evals,
            },
        )
        logger.debug(f"Start lam0={lam0:.4g}: f={res.fun:.6e}, nfev={res.nfev}, success={res.success}")
        if best is None or res.fun < best.fun:
            best = res

    c, lam, x0 = unpack(best.x)
    params = ExtremalParams(c, max(lam, LAMBDA_FLOOR), tuple(x0))
    distance = _metric_value(u, ExtremalField(params, profile), p, metric, rule)
    relative = (max(distance, 0.0) / scale_p) ** (1.0 / p)

    result = FitResult(
        params=params,
        distance=distance,
        metric=metric,
        evaluations=evaluations,
        converged=bool(best.success),
        relative_distance=relative,
        restarts=len(starts) - 1,
    )
    logger.info(
        f"Nearest extremal ({metric.value}): c={c:.6g} lam={lam:.6g} |x0|={np.linalg.norm(x0):.3e} "
        f"distance={distance:.6e} evaluations={evaluations}",
        extra={'p': p, 'dim': N, 'stage': 'fit'}
    )
    return result


def deficit_sandwich(u: FeFunction, fit: FitResult, p: float,
                     rule: Optional[QuadratureRule] = None) -> SandwichReport:
    """Deficit against its quasi-norm lower and upper expressions at the fitted extremal.

    lower = Q_v(u, v)/||Du||^p + (||Du - Dv||_p / ||Du||_p)^max(2, p)
    upper = Q_u(u, v)/||Du||^p [+ (int |Dv|^(p-1)|D(u-v)| / ||Du||^p)^2 for p < 2]
    with Q_w the quasi-norm weighted by w.
    """
    v = ExtremalField(fit.params, radial_profile(p, u.mesh.dim))
    norm_p = grad_p_norm_p(u, p)
    report = deficit_report(u, p, rule)
    notes = []

    distance = sobolev_distance_p(u, v, p, rule)
    lower = (quasinorm_sq(u, v, p, WeightMode.V_WEIGHT, rule) / norm_p
             + (max(distance, 0.0) / norm_p) ** (max(2.0, p) / p))
    upper = quasinorm_sq(u, v, p, WeightMode.U_WEIGHT, rule) / norm_p
    if p < 2.0:
        upper += (mixed_term(u, v, p, rule) / norm_p) ** 2

    lower_ratio = upper_ratio = None
    if report.below_resolution:
        notes.append('deficit below resolution; ratios undefined')
    elif lower <= 0.0 or upper <= 0.0:
        notes.append('vanishing bound expression; ratios undefined')
    else:
        lower_ratio = report.deficit / lower
        upper_ratio = upper / report.deficit
    if fit.out_of_regime:
        notes.append(f'relative distance {fit.relative_distance:.3g} > {OUT_OF_REGIME}; out of regime')

    return SandwichReport(
        lower_expr=float(lower),
        deficit=report.deficit,
        upper_expr=float(upper),
        lower_ratio=lower_ratio,
        upper_ratio=upper_ratio,
        below_resolution=report.below_resolution,
        out_of_regime=bool(fit.out_of_regime),
        notes=notes,
    )
