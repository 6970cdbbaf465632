"""
Convergence sweeps, rate fitting and the lemma suite.

A sweep solves S_h level by level, records the witness and nearest-extremal
diagnostics, and fits log(S_h - S) against log(h) on the non-coarsest
converged levels.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

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
)
from sobolevlab.config import Settings, SolverOptions
from sobolevlab.errors import ConfigError, RateFitError, UnsupportedDimensionError
from sobolevlab.extremals import (
    ExtremalField,
    ExtremalParams,
    alpha_exponent,
    check_exponent,
    gamma_exponent,
    radial_profile,
    sobolev_constant_ref,
)
from sobolevlab.manifold import Metric, nearest_extremal
from sobolevlab.mesh import SUPPORTED_DIMS, build_ball_mesh
from sobolevlab.quadrature import conical_rule
from sobolevlab.solver import solve_Sh
from utils.logging import StageLogger, get_logger, log_execution_time

logger = get_logger(__name__)

GAP_FLOOR = -1e-6
SLOPE_TOLERANCE = {2: 0.2, 3: 0.25}
BRACKET_TOLERANCE = 0.2
# nearest-extremal diagnostics use a cheaper rule than the solver
FIT_ORDER = 4
FIT_EVALS = 300


class RateFit(NamedTuple):
    slope: float
    residual: float


@dataclass
class ConvergenceRow:
    level: int
    h: float
    S_h: float
    gap: float
    witness: float
    nearest_distance: float
    converged: bool = True
    iterations: int = 0

    @property
    def witness_gap(self) -> float:
        return self.witness - (self.S_h - self.gap)

    def to_record(self) -> dict:
        return {
            'level': self.level,
            'h': self.h,
            'S_h': self.S_h,
            'gap': self.gap,
            'witness': self.witness,
            'nearest_distance': self.nearest_distance,
        }


@dataclass
class ConvergenceReport:
    """Per-level table and fitted rates for one (p, N)."""

    p: float
    N: int
    rows: List[ConvergenceRow] = field(default_factory=list)
    fitted_slope: float = math.nan
    fit_residual: float = math.nan
    witness_slope: float = math.nan
    fit_min_level: int = 2
    inconclusive: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def alpha_target(self) -> float:
        return alpha_exponent(self.p, self.N)

    @property
    def gamma_bracket(self) -> Tuple[float, float]:
        g = gamma_exponent(self.p, self.N)
        return g * min(2.0, self.p), g * max(2.0, self.p)

    @property
    def prefactors(self) -> List[float]:
        """gap / h^alpha per row; recorded, not asserted."""
        return [r.gap / r.h ** self.alpha_target if r.gap > 0 else math.nan for r in self.rows]

    @property
    def gaps_positive(self) -> bool:
        return all(r.gap > 0 for r in self.rows if r.converged)

    @property
    def rate_pass(self) -> bool:
        tol = SLOPE_TOLERANCE.get(self.N, 0.2)
        return not self.inconclusive and abs(self.fitted_slope - self.alpha_target) <= tol

    @property
    def bracket_pass(self) -> bool:
        lo, hi = self.gamma_bracket
        return (not self.inconclusive
                and lo - BRACKET_TOLERANCE <= self.fitted_slope <= hi + BRACKET_TOLERANCE)

    @property
    def witness_pass(self) -> bool:
        dominated = all(r.S_h <= r.witness + 1e-12 for r in self.rows)
        tol = SLOPE_TOLERANCE.get(self.N, 0.2)
        return dominated and abs(self.witness_slope - self.alpha_target) <= tol

    def summary(self) -> dict:
        lo, hi = self.gamma_bracket
        return {
            'p': self.p,
            'N': self.N,
            'fitted_slope': self.fitted_slope,
            'fit_residual': self.fit_residual,
            'witness_slope': self.witness_slope,
            'alpha_target': self.alpha_target,
            'gamma_min': lo,
            'gamma_max': hi,
            'prefactors': self.prefactors,
            'inconclusive': self.inconclusive,
            'rate_pass': self.rate_pass,
            'bracket_pass': self.bracket_pass,
            'witness_pass': self.witness_pass,
            'gaps_positive': self.gaps_positive,
            'notes': self.notes,
        }


def fit_rate(rows: Iterable[Union[ConvergenceRow, Tuple[float, float]]]) -> RateFit:
    """Least-squares slope of log(gap) against log(h).

    Args:
        rows: ConvergenceRow objects or (h, gap) pairs

    Returns:
        RateFit(slope, residual) with residual the RMS of the fit errors

    Raises:
        RateFitError: If fewer than three rows with positive gap remain
    """
    pairs = [(r.h, r.gap) if isinstance(r, ConvergenceRow) else (float(r[0]), float(r[1])) for r in rows]
    usable = [(h, g) for h, g in pairs if g > 0 and h > 0]
    if len(usable) < len(pairs):
        logger.warning(f"Excluded {len(pairs) - len(usable)} rows with nonpositive gap from the rate fit")
    if len(usable) < 3:
        raise RateFitError(f"Rate fit needs at least 3 rows with positive gap, got {len(usable)}",
                           {'rows': len(pairs)})
    x = np.log([h for h, _ in usable])
    y = np.log([g for _, g in usable])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(float(slope), residual)


def _level_row(level: int, p: float, N: int, opts: SolverOptions, s_ref: float,
               fit_nearest: bool) -> ConvergenceRow:
    with StageLogger('level', p=p, dim=N, level=level):
        mesh = build_ball_mesh(N, level)
        result = solve_Sh(mesh, p, opts)
        distance = math.nan
        if fit_nearest:
            fit = nearest_extremal(result.u_h, p, Metric.SOBOLEV_P, conical_rule(N, FIT_ORDER),
                                   restarts=False, max_evals=FIT_EVALS)
            distance = fit.distance
        return ConvergenceRow(
            level=level,
            h=mesh.h,
            S_h=result.S_h,
            gap=result.S_h - s_ref,
            witness=result.witness_quotient,
            nearest_distance=distance,
            converged=result.converged,
            iterations=result.iterations,
        )


@log_execution_time()
def run_convergence(p: float, N: int, max_level: int, opts: Optional[SolverOptions] = None,
                    settings: Optional[Settings] = None, min_level: int = 1,
                    fit_nearest: bool = True) -> ConvergenceReport:
    """Solve on levels min_level..max_level and fit the rate.

    Args:
        p: Exponent, 1 < p < N
        N: Dimension, 2 or 3
        max_level: Finest level, at least 3
        opts: Solver options (from ``settings`` if None)
        settings: Run settings; ``fit_min_level`` sets the first fitted level
        min_level: Coarsest level solved
        fit_nearest: Fit the nearest extremal at every level

    Returns:
        ConvergenceReport; marked inconclusive if fewer than three converged rows qualify

    Raises:
        ConfigError: If max_level < 3
        UnsupportedDimensionError: If N is not 2 or 3
    """
    check_exponent(p, N)
    if N not in SUPPORTED_DIMS:
        raise UnsupportedDimensionError(f"Unsupported dimension N={N}", {'dim': N})
    if max_level < 3:
        raise ConfigError(f"max_level must be at least 3, got {max_level}")
    settings = settings or Settings()
    opts = opts or settings.solver_options(N)
    s_ref = sobolev_constant_ref(p, N)

    report = ConvergenceReport(p=p, N=N, fit_min_level=settings.fit_min_level)
    for level in range(min_level, max_level + 1):
        row = _level_row(level, p, N, opts, s_ref, fit_nearest)
        if row.gap <= GAP_FLOOR:
            report.notes.append(f'level {level}: gap {row.gap:.3e} below the Sobolev bound')
            logger.error(f"S_h below S_ref at level {level}: gap={row.gap:.3e}", extra={'p': p, 'dim': N})
        if not row.converged:
            report.notes.append(f'level {level}: solver did not converge')
        report.rows.append(row)

    fit_rows = [r for r in report.rows if r.level >= report.fit_min_level and r.converged]
    try:
        report.fitted_slope, report.fit_residual = fit_rate(fit_rows)
        report.witness_slope = fit_rate([(r.h, r.witness_gap) for r in fit_rows]).slope
    except RateFitError as e:
        report.inconclusive = True
        report.notes.append(e.message)

    logger.info(
        f"Rates p={p}, N={N}: slope={report.fitted_slope:.4f} (alpha={report.alpha_target:.4f}), "
        f"witness slope={report.witness_slope:.4f}, residual={report.fit_residual:.3e}",
        extra={'p': p, 'dim': N, 'stage': 'rates'}
    )
    return report


def _sweep_job(args) -> ConvergenceReport:
    p, N, max_level, settings, fit_nearest = args
    return run_convergence(p, N, max_level, settings=settings, fit_nearest=fit_nearest)


@log_execution_time()
def run_sweeps(configs: Sequence[Tuple[float, int]], max_level: int, settings: Optional[Settings] = None,
               jobs: int = 1, fit_nearest: bool = True) -> List[ConvergenceReport]:
    """Independent (p, N) sweeps, in a process pool when ``jobs`` > 1; results follow ``configs``."""
    settings = settings or Settings()
    tasks = [(p, N, max_level, settings, fit_nearest) for p, N in configs]
    if jobs <= 1 or len(tasks) <= 1:
        return [_sweep_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_job, tasks))


@log_execution_time()
def run_lemma_suite(p: float, N: int, seed: int = 0) -> List[CheckReport]:
    """Run every check with its default grids for (p, N)."""
    check_exponent(p, N)
    base_level = 3 if N == 2 else 1
    mesh = build_ball_mesh(N, base_level)
    profile = radial_profile(p, N)

    jobs = [
        ('inequalities', lambda: [check_elementary_inequalities(q, seed=seed) for q in sorted({p, 2.0})]),
        ('gradient_quadratic', lambda: [check_gradient_lower_bound(QuadraticField(N), mesh, p)]),
        ('gradient_extremal', lambda: [check_gradient_lower_bound(
            ExtremalField(ExtremalParams.centered(4.0, N), profile), mesh, p)]),
        ('interp_scalings', lambda: [check_interp_scalings(p, N)]),
        ('tail_scalings', lambda: [check_tail_scalings(p, N)]),
        ('hessian_bounds', lambda: [check_hessian_bounds(p, N, seed=seed)]),
        ('interpolation_decay', lambda: [check_interpolation_decay(p, N)]),
        ('deficit_sandwich', lambda: [check_deficit_sandwich(p, N)]),
    ]
    reports: List[CheckReport] = []
    for stage, job in jobs:
        with StageLogger(stage, p=p, dim=N):
            reports.extend(job())

    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error(f"Lemma suite p={p}, N={N}: failed checks {failed}", extra={'p': p, 'dim': N})
    else:
        logger.info(f"Lemma suite p={p}, N={N}: all {len(reports)} checks passed", extra={'p': p, 'dim': N})
    return reports
