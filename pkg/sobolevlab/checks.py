"""
Numerical verification suite for the extremal, interpolation and deficit estimates.

Every check measures constants instead of assuming them: it reports the
smallest bracket found on a deterministic sample and whether that bracket
is finite and stable. A violated inequality direction marks the report as
failed; the caller decides whether that aborts the run.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np
from scipy import integrate, optimize, special

from sobolevlab.errors import ConfigError
from sobolevlab.extremals import (
    ExtremalField,
    ExtremalParams,
    LambdaMode,
    beta_exponent,
    check_exponent,
    hessian_envelope_a,
    hessian_p_integral_ball,
    interior_integral_p,
    optimal_lambda,
    q_exponent,
    radial_profile,
    random_params,
    sample_ball,
    tail_integral_p,
)
from sobolevlab.fespace import element_gradients, interpolate, interpolate_shifted, interpolation_error
from sobolevlab.functionals import WeightMode, mixed_term, quasinorm_sq, sobolev_distance_p
from sobolevlab.manifold import Metric, deficit_sandwich, nearest_extremal
from sobolevlab.mesh import Mesh, build_ball_mesh, refine
from sobolevlab.quadrature import QuadratureRule, default_rule, physical_points
from utils.logging import get_logger, log_execution_time

logger = get_logger(__name__)

DIRECTIONS_2D = 64
ICOSPHERE_LEVEL = 2
INEQUALITY_A_GRID = (0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
CONSTANT_CAP = 1e4
MIN_SAMPLES = 10_000
SLOPE_TOLERANCE = 0.15
INTERIOR_RESOLUTION = 0.5
SANDWICH_SPREAD = 3.0
TAIL_SPREAD = 1.5
REFINED_BRACKET = 10.0
CURVATURE_BLOCK = 2_000_000


@dataclass
class CheckReport:
    """Outcome of one check: measured constants, sample counts and notes."""

    name: str
    anchor: str
    passed: bool
    constants: Dict[str, Any] = field(default_factory=dict)
    samples: int = 0
    notes: List[str] = field(default_factory=list)
    params: Dict[str, Any] = field(default_factory=dict)

    def fail(self, note: str):
        self.passed = False
        self.notes.append(note)

    def to_record(self) -> dict:
        return {
            'name': self.name,
            'anchor': self.anchor,
            'passed': self.passed,
            'constants': json.dumps(self.constants, sort_keys=True),
            'params': json.dumps(self.params, sort_keys=True),
            'samples': self.samples,
            'notes': '; '.join(self.notes),
        }


class C2Field(Protocol):
    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    def hessian(self, x: np.ndarray) -> np.ndarray: ...


class QuadraticField:
    """x -> |x|^2 / 2, with identity Hessian."""

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return 0.5 * np.einsum('ni,ni->n', x, x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float)).copy()

    def hessian(self, x: np.ndarray) -> np.ndarray:
        n = np.atleast_2d(x).shape[0]
        return np.broadcast_to(np.eye(self.dim), (n, self.dim, self.dim)).copy()


def _icosphere(subdivisions: int) -> np.ndarray:
    """Vertices of the icosahedron after ``subdivisions`` midpoint splits, on the unit sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = [np.array(v, dtype=float) for v in (
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    )]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        midpoints = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoints:
                midpoints[key] = len(vertices)
                vertices.append(0.5 * (vertices[i] + vertices[j]))
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    points = np.array(vertices)
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def direction_grid(N: int) -> np.ndarray:
    """Unit directions for envelope maximization: 64 angles in 2D, the level-2 icosphere (162 points) in 3D."""
    if N == 2:
        theta = 2.0 * np.pi * np.arange(DIRECTIONS_2D) / DIRECTIONS_2D
        return np.column_stack([np.cos(theta), np.sin(theta)])
    return _icosphere(ICOSPHERE_LEVEL)


def _log_log_slope(x: Sequence[float], y: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)
    return float(slope)


def _within(value: float, target: float, rel: float) -> bool:
    return abs(value - target) <= rel * abs(target)


# --- two-point power inequalities -------------------------------------------

def _binomial_series(alpha: float, w: np.ndarray, start: int, terms: int = 10) -> np.ndarray:
    """sum_{k=start}^{start+terms-1} binom(alpha, k) w^k."""
    out = np.zeros_like(w)
    for k in range(start, start + terms):
        out += special.binom(alpha, k) * w ** k
    return out


def _scalar_remainder(z: np.ndarray, q: float) -> np.ndarray:
    """|1+z|^q - 1 - q z, series form near z = 0."""
    small = np.abs(z) < 1e-3
    out = np.empty_like(z)
    out[small] = _binomial_series(q, z[small], 2)
    zb = z[~small]
    out[~small] = np.abs(1.0 + zb) ** q - 1.0 - q * zb
    return out


def _vector_remainder(y: np.ndarray, q: float) -> np.ndarray:
    """|e1 + y|^q - 1 - q y_1."""
    y1 = y[:, 0]
    ysq = np.einsum('ni,ni->n', y, y)
    w = 2.0 * y1 + ysq
    small = np.abs(w) < 1e-3
    out = np.empty_like(w)
    # (1 + w)^(q/2) - 1 - q y1 = (q/2)|y|^2 + sum_{k>=2} binom(q/2, k) w^k
    out[small] = 0.5 * q * ysq[small] + _binomial_series(0.5 * q, w[small], 2)
    out[~small] = (1.0 + w[~small]) ** (0.5 * q) - 1.0 - q * y1[~small]
    return out


def _required_B(lhs: np.ndarray, t_a: np.ndarray, t_b: np.ndarray, A: float) -> float:
    excess = lhs - A * t_a
    pos = t_b > 0
    if np.any(excess[~pos] > 0):
        return math.inf
    return max(0.0, float(np.max(excess[pos] / t_b[pos])))


def _scan_constants(lhs: np.ndarray, t_a: np.ndarray, t_b: np.ndarray) -> Dict[str, float]:
    """Smallest grid A whose required B stays below the cap, and that B."""
    table = {A: _required_B(lhs, t_a, t_b, A) for A in INEQUALITY_A_GRID}
    for A, B in table.items():
        if B <= CONSTANT_CAP:
            return {'A': A, 'B': B, 'B_at_A0': table[0.0]}
    return {'A': math.inf, 'B': math.inf, 'B_at_A0': table[0.0]}


@log_execution_time()
def check_elementary_inequalities(q: float, n_samples: int = 100_000, seed: int = 0) -> CheckReport:
    """Constants for the three two-point power inequalities.

    (1) ||a+b|^q - |a|^q - q|a|^(q-2)ab| <= A|a|^(q-2)b^2 + B|b|^q
    (2) |x+y|^q <= |x|^q + q|x|^(q-2)x.y + A|x|^(q-2)|y|^2 + B|y|^q
    (3) |x+y|^q <= |x|^q + q|x|^(q-2)x.y + C (|x|+|y|)^q |y|^2 / (|x|^2+|y|^2)

    By homogeneity a = 1, z = b/a and x = e1 (after rotation). Samples span
    magnitudes 1e-6..1e6 for each factor (ratios 1e-12..1e12) plus the
    structured cases b = -a, y = -x and near-zero perturbations.

    Raises:
        ConfigError: If q is outside (1, 6] or fewer than 1e4 samples are requested
    """
    if not (1.0 < q <= 6.0):
        raise ConfigError(f"Inequality exponent q={q} outside (1, 6]")
    if n_samples < MIN_SAMPLES:
        raise ConfigError(f"At least {MIN_SAMPLES} samples required, got {n_samples}")

    rng = np.random.default_rng(seed)
    mags = 10.0 ** rng.uniform(-6.0, 6.0, size=(n_samples, 2))
    signs = rng.choice([-1.0, 1.0], size=(n_samples, 2))
    a, b = (mags * signs).T
    structured = np.array([-1.0, 1e-14, -1e-14, 1e-10, -1e-10, 1e-8, -1.0 + 1e-12, -2.0, 1e12, -1e12])
    z = np.concatenate([b / a, structured])

    absz = np.abs(z)
    lhs1 = np.abs(_scalar_remainder(z, q))
    c1 = _scan_constants(lhs1, absz ** 2, absz ** q)

    N = 3
    dirs = rng.standard_normal((n_samples, N))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    y = dirs * (10.0 ** rng.uniform(-12.0, 12.0, size=n_samples))[:, None]
    extra = np.array([[-1.0, 0.0, 0.0], [1e-14, 0.0, 0.0], [0.0, 1e-14, 0.0], [-2.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [-1.0 + 1e-12, 0.0, 0.0]])
    y = np.vstack([y, extra])
    ny = np.linalg.norm(y, axis=1)
    rem = _vector_remainder(y, q)
    c2 = _scan_constants(rem, ny ** 2, ny ** q)

    weight3 = (1.0 + ny) ** q * ny ** 2 / (1.0 + ny ** 2)
    pos = weight3 > 0
    C3 = max(0.0, float(np.max(rem[pos] / weight3[pos])))

    report = CheckReport(
        name='elementary_inequalities',
        anchor='two-point power inequalities |x+y|^q',
        passed=True,
        constants={'A1': c1['A'], 'B1': c1['B'], 'B1_at_A0': c1['B_at_A0'],
                   'A2': c2['A'], 'B2': c2['B'], 'B2_at_A0': c2['B_at_A0'], 'C3': C3},
        samples=len(z) + len(y),
        params={'q': q, 'seed': seed, 'n_samples': n_samples},
    )
    if not (math.isfinite(c1['B']) and math.isfinite(c2['B']) and math.isfinite(C3)):
        report.fail('no finite constants on the candidate grid')
    if q <= 2.0:
        if c1['B_at_A0'] > CONSTANT_CAP:
            report.fail(f"A=0 insufficient for the scalar inequality at q={q}")
        if c2['B_at_A0'] > CONSTANT_CAP:
            report.fail(f"A=0 insufficient for the vector inequality at q={q}")
    logger.info(f"Elementary inequalities q={q}: {report.constants}", extra={'stage': 'checks'})
    return report


# --- gradient best-constant lower bound on simplices -------------------------

def lower_bound_1d_constant(p: float) -> float:
    """min_A int_0^1 |r - A|^p dr, the one-dimensional instance with u'' = 1 on [0, 1].

    The minimizer is A = 1/2 and the value (1/2)^p / (p + 1); it is computed
    here by bounded scalar minimization over adaptive quadrature.
    """
    def cost(A):
        value, _ = integrate.quad(lambda r: abs(r - A) ** p, 0.0, 1.0, points=[A], epsabs=0.0, epsrel=1e-12)
        return value

    res = optimize.minimize_scalar(cost, bounds=(0.0, 1.0), method='bounded', options={'xatol': 1e-10})
    return float(res.fun)


def _best_constant_fit(G: np.ndarray, w: np.ndarray, p: float, max_iter: int = 200) -> np.ndarray:
    """min over A of sum_k w_k |G_k - A|^p per element, G of shape (ne, nq, N).

    Starts at the weighted mean (the p = 2 minimizer) and takes reweighted
    gradient steps A <- sum w r^(p-2) G / sum w r^(p-2), halving any step
    that increases the cost.
    """
    def cost(A):
        return (np.linalg.norm(G - A[:, None, :], axis=2) ** p) @ w

    A = np.einsum('eqn,q->en', G, w) / w.sum()
    if p == 2.0:
        return cost(A)
    current = cost(A)
    scale = np.max(np.linalg.norm(G, axis=2), axis=1) + 1e-300
    for _ in range(max_iter):
        r = np.maximum(np.linalg.norm(G - A[:, None, :], axis=2), 1e-14 * scale[:, None])
        weights = w * r ** (p - 2.0)
        target = np.einsum('eqn,eq->en', G, weights) / weights.sum(axis=1)[:, None]
        step = target - A
        t = np.ones(len(A))
        for _ in range(30):
            trial = A + t[:, None] * step
            value = cost(trial)
            worse = value > current
            if not np.any(worse):
                break
            t = np.where(worse, 0.5 * t, t)
        accept = value <= current
        A = np.where(accept[:, None], trial, A)
        current = np.where(accept, value, current)
        if np.max(np.linalg.norm(step, axis=1) / scale) < 1e-12:
            break
    return current


def gradient_bound_ratios(f: C2Field, mesh: Mesh, p: float,
                          rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Per element: min_A int_T |Df - A|^p over rho_T^(N+p) max_xi min_x |xi^T D^2f(x) xi|^p.

    Elements whose envelope vanishes on the direction grid get NaN.
    """
    rule = default_rule(mesh.dim) if rule is None else rule
    N = mesh.dim
    dirs = direction_grid(N)
    w = rule.normalized_weights
    ratios = np.empty(mesh.n_elements)
    chunk = max(1, CURVATURE_BLOCK // (rule.n_points * len(dirs)))
    for start in range(0, mesh.n_elements, chunk):
        block = np.arange(start, min(start + chunk, mesh.n_elements))
        pts = physical_points(mesh, rule, block)
        flat = pts.reshape(-1, N)
        G = np.asarray(f.gradient(flat)).reshape(pts.shape)
        H = np.asarray(f.hessian(flat)).reshape(len(block), rule.n_points, N, N)

        lhs = mesh.volumes[block] * _best_constant_fit(G, w, p)
        curvature = np.abs(np.einsum('di,eqij,dj->eqd', dirs, H, dirs))
        envelope = np.max(np.min(curvature, axis=1), axis=1) ** p
        envelope = envelope * mesh.rho_T[block] ** (N + p)
        with np.errstate(divide='ignore', invalid='ignore'):
            ratios[block] = np.where(envelope > 0, lhs / envelope, np.nan)
    return ratios


@log_execution_time()
def check_gradient_lower_bound(f: C2Field, mesh: Mesh, p: float,
                               rule: Optional[QuadratureRule] = None,
                               compare_refined: bool = True) -> CheckReport:
    """Per-element ratio of the best-constant gradient misfit to its curvature envelope.

    Passes when the minimum ratio is positive and, with ``compare_refined``,
    the minimum on the once-refined mesh stays within a factor 10.
    """
    ratios = gradient_bound_ratios(f, mesh, p, rule)
    valid = np.isfinite(ratios)
    report = CheckReport(
        name='gradient_lower_bound',
        anchor='best-constant gradient misfit on simplices vs rho_T^(N+p) curvature',
        passed=True,
        samples=int(valid.sum()),
        params={'p': p, 'dim': mesh.dim, 'field': type(f).__name__, 'n_elements': mesh.n_elements},
    )
    c_1d = lower_bound_1d_constant(p)
    report.constants['c_1d'] = c_1d
    if not valid.any():
        report.fail('curvature envelope vanishes on every element')
        return report
    if (~valid).any():
        report.notes.append(f'{int((~valid).sum())} elements with vanishing envelope skipped')

    report.constants['min_ratio'] = float(np.min(ratios[valid]))
    report.constants['max_ratio'] = float(np.max(ratios[valid]))
    if report.constants['min_ratio'] <= 0.0:
        report.fail('nonpositive ratio')

    if compare_refined:
        fine = gradient_bound_ratios(f, refine(mesh), p, rule)
        fine_min = float(np.nanmin(fine))
        report.constants['min_ratio_refined'] = fine_min
        spread = report.constants['min_ratio'] / fine_min if fine_min > 0 else math.inf
        report.constants['refined_spread'] = spread
        if not (1.0 / REFINED_BRACKET <= spread <= REFINED_BRACKET):
            report.fail(f'minimum ratio moved by factor {spread:.3g} under refinement')
    logger.info(f"Gradient lower bound ({type(f).__name__}, p={p}): {report.constants}",
                extra={'stage': 'checks', 'p': p, 'dim': mesh.dim})
    return report


# --- interpolated-extremal distance scalings ---------------------------------

def _default_levels(N: int) -> tuple:
    return (3, 4, 5, 6) if N == 2 else (1, 2, 3, 4)


@log_execution_time()
def check_interp_scalings(p: float, N: int, lambda_grid: Optional[Sequence[float]] = None,
                          level_grid: Optional[Sequence[int]] = None,
                          lam_h: Optional[float] = None,
                          rule: Optional[QuadratureRule] = None) -> CheckReport:
    """Scalings of the three distances between U_lam and its shifted interpolant.

    Quantities (over R^N, interpolant zero outside B_h):
      d1 = int |D(U - u_h)|^p
      d2 = int (|DU| + |D(U - u_h)|)^(p-2) |D(U - u_h)|^2
      d3 = int |DU|^(p-1) |D(U - u_h)|            (p < 2 only)
    The part inside B_h is the mesh term and must scale like h^p, h^2, h, and
    like lam^(beta s) for the same exponents s once h lam^beta <= 1/2; the
    part outside B_h is the tail term and must scale like lam^(-p/(p-1)).
    The h sweep runs at ``lam_h`` (default: lam^(p/(N-p)) = 2), the lam sweep
    on the finest level. Grid points violating h lam^(p/(N-p)) <= 1 are skipped.
    """
    check_exponent(p, N)
    beta = beta_exponent(p, N)
    q = q_exponent(p)
    if level_grid is None:
        level_grid = _default_levels(N)
    if lambda_grid is None:
        lambda_grid = [R ** (1.0 / beta) for R in (4.0, 8.0, 16.0, 32.0)]
    if lam_h is None:
        lam_h = 2.0 ** (1.0 / beta)
    profile = radial_profile(p, N)
    meshes = {level: build_ball_mesh(N, level) for level in level_grid}
    targets = {'d1': p, 'd2': 2.0, 'd3': 1.0}
    names = ['d1', 'd2'] + (['d3'] if p < 2.0 else [])

    def parts(mesh, lam):
        U = ExtremalField(ExtremalParams.centered(lam, N), profile)
        u_h = interpolate_shifted(U, mesh)
        out = {
            'd1': sobolev_distance_p(u_h, U, p, rule, parts=True),
            'd2': quasinorm_sq(u_h, U, p, WeightMode.V_WEIGHT, rule, parts=True),
        }
        if p < 2.0:
            out['d3'] = mixed_term(u_h, U, p, rule, parts=True)
        return out

    report = CheckReport(
        name='interp_scalings',
        anchor='distance of U_lam to V_h: lam^(-p/(p-1)) + (h lam^(p/(N-p)))^s',
        passed=True,
        params={'p': p, 'dim': N, 'lambda_grid': list(lambda_grid), 'level_grid': list(level_grid),
                'lam_h': lam_h},
    )

    # h sweep
    h_rows = []
    for level, mesh in meshes.items():
        if mesh.h * lam_h ** beta > 1.0:
            report.notes.append(f'level {level} skipped at lam={lam_h:.4g}: h lam^beta > 1')
            continue
        h_rows.append((mesh.h, parts(mesh, lam_h)))
    if len(h_rows) >= 2:
        hs = [h for h, _ in h_rows]
        for name in names:
            slope = _log_log_slope(hs, [row[name].interior for _, row in h_rows])
            report.constants[f'{name}_h_slope'] = slope
            if not _within(slope, targets[name], SLOPE_TOLERANCE):
                report.fail(f'{name} slope in h {slope:.3f}, expected {targets[name]:.3f}')
    else:
        report.notes.append('fewer than two admissible levels for the h sweep')

    # lambda sweep on the finest mesh: the exterior part carries the tail,
    # the interior part is a function of h lam^beta alone
    finest = meshes[max(meshes)]
    lam_rows = []
    for lam in sorted(lambda_grid):
        if finest.h * lam ** beta > 1.0:
            report.notes.append(f'lam={lam:.4g} skipped on the finest level: h lam^beta > 1')
            continue
        lam_rows.append((lam, parts(finest, lam)))
    if len(lam_rows) >= 2:
        lams = [lam for lam, _ in lam_rows]
        for name in names:
            slope = _log_log_slope(lams, [row[name].exterior for _, row in lam_rows])
            report.constants[f'{name}_lambda_slope'] = slope
            if not _within(slope, -q, SLOPE_TOLERANCE):
                report.fail(f'{name} slope in lambda {slope:.3f}, expected {-q:.3f}')
    else:
        report.notes.append('fewer than two admissible lambda values for the lambda sweep')

    inner_rows = [(lam, row) for lam, row in lam_rows if finest.h * lam ** beta <= INTERIOR_RESOLUTION]
    if len(inner_rows) >= 2:
        lams = [lam for lam, _ in inner_rows]
        for name in names:
            slope = _log_log_slope(lams, [row[name].interior for _, row in inner_rows])
            target = beta * targets[name]
            report.constants[f'{name}_lambda_interior_slope'] = slope
            if not _within(slope, target, SLOPE_TOLERANCE):
                report.fail(f'{name} interior slope in lambda {slope:.3f}, expected {target:.3f}')
    else:
        report.notes.append(f'fewer than two lambda values with h lam^beta <= {INTERIOR_RESOLUTION} '
                            f'for the interior lambda sweep')

    report.samples = len(h_rows) + len(lam_rows)
    logger.info(f"Interpolation scalings p={p}, N={N}: {report.constants}",
                extra={'stage': 'checks', 'p': p, 'dim': N})
    return report


# --- tail and interior mass of the extremals --------------------------------

@log_execution_time()
def check_tail_scalings(p: float, N: int,
                        large_lambdas: Sequence[float] = (4.0, 8.0, 16.0, 32.0),
                        small_lambdas: Sequence[float] = (1 / 16, 1 / 8, 1 / 4, 1 / 2),
                        off_centers: Sequence[float] = (0.25, 0.5),
                        outside_lambdas: Sequence[float] = (1.0, 4.0, 16.0)) -> CheckReport:
    """Concentration (large lam), spreading (small lam) and off-ball centers.

    - tail * lam^(p/(p-1)) stays in a bracket of spread <= 1.5 for large lam;
    - the interior mass grows like lam^((p/(N-p))(N + p/(p-1))) for small lam;
    - off-center tails times (1-|x0|)^((N-p)/(p-1)) lam^(p/(p-1)) are recorded;
    - a center on or outside the unit sphere leaves at least half the mass outside.
    """
    check_exponent(p, N)
    profile = radial_profile(p, N)
    q = q_exponent(p)
    report = CheckReport(
        name='tail_scalings',
        anchor='extremal mass inside and outside the unit ball',
        passed=True,
        params={'p': p, 'dim': N, 'large_lambdas': list(large_lambdas),
                'small_lambdas': list(small_lambdas)},
    )

    scaled = [tail_integral_p(ExtremalParams.centered(lam, N), profile) * lam ** q for lam in large_lambdas]
    c_lo, c_hi = min(scaled), max(scaled)
    report.constants.update({'tail_c1': c_lo, 'tail_c2': c_hi, 'tail_spread': c_hi / c_lo})
    if c_hi / c_lo > TAIL_SPREAD:
        report.fail(f'tail bracket spread {c_hi / c_lo:.3f} > {TAIL_SPREAD}')

    interior = [interior_integral_p(ExtremalParams.centered(lam, N), profile) for lam in small_lambdas]
    exponent = (p / (N - p)) * (N + q)
    slope = _log_log_slope(small_lambdas, interior)
    report.constants.update({'interior_slope': slope, 'interior_exponent': exponent})
    if not _within(slope, exponent, 0.10):
        report.fail(f'interior mass slope {slope:.3f}, expected {exponent:.3f}')

    off = []
    for r0 in off_centers:
        x0 = (r0,) + (0.0,) * (N - 1)
        for lam in large_lambdas:
            tail = tail_integral_p(ExtremalParams(1.0, lam, x0), profile)
            off.append(tail * lam ** q * (1.0 - r0) ** ((N - p) / (p - 1.0)))
    if off:
        report.constants['off_center_c2'] = max(off)

    half = []
    for r0 in (1.0, 1.5):
        x0 = (r0,) + (0.0,) * (N - 1)
        for lam in outside_lambdas:
            half.append(tail_integral_p(ExtremalParams(1.0, lam, x0), profile))
    report.constants['outside_center_min_tail'] = min(half)
    if min(half) < 0.5 - 1e-9:
        report.fail(f'center outside the ball keeps only {min(half):.4f} of the mass outside')

    report.samples = len(scaled) + len(interior) + len(off) + len(half)
    logger.info(f"Tail scalings p={p}, N={N}: {report.constants}", extra={'stage': 'checks', 'p': p, 'dim': N})
    return report


# --- second-derivative envelopes --------------------------------------------

@log_execution_time()
def check_hessian_bounds(p: float, N: int, n_points: int = 1000, seed: int = 0,
                         lambdas: Sequence[float] = (2.0, 4.0, 8.0, 16.0, 32.0)) -> CheckReport:
    """Upper and lower envelopes of D^2 U in terms of lam^((N+p)/(N-p)) a(lam^beta |x - x0|).

    The lower envelope needs one fixed direction per region of space, so the
    measured constants are inf over points of max over a finite direction set
    (the grid, or the N coordinate axes). For p >= 2 the Laplacian gives the
    explicit constant A = K (p-2)(N-1)/(p-1), and max_k |d_kk U| >= |Delta U|/N
    turns it into A/N on the coordinate axes.
    """
    check_exponent(p, N)
    profile = radial_profile(p, N)
    beta = beta_exponent(p, N)
    rng = np.random.default_rng(seed)
    dirs = direction_grid(N)
    stated = profile.K * (p - 2.0) * (N - 1.0) / (p - 1.0) if p >= 2.0 else None

    params = random_params(rng, N, n_points)
    x = sample_ball(n_points, N, rng)
    upper, lower_dir, lower_coord, lower_lap = [], [], [], []
    for prm, xi in zip(params, x):
        unit = ExtremalParams(1.0, prm.lam, prm.x0)
        field_ = ExtremalField(unit, profile)
        rho = prm.lam ** beta * float(np.linalg.norm(xi - unit.center))
        if rho == 0.0:
            continue
        env = prm.lam ** (1.0 + 2.0 * beta) * float(hessian_envelope_a(rho, p, N))
        H = field_.hessian(xi[None, :])[0]
        upper.append(np.linalg.norm(H) / env)
        lower_dir.append(float(np.max(np.abs(np.einsum("di,ij,dj->d", dirs, H, dirs)))) / env)
        lower_coord.append(float(np.max(np.abs(np.diag(H)))) / env)
        lower_lap.append(abs(float(np.trace(H))) / env)

    report = CheckReport(
        name='hessian_bounds',
        anchor='second derivatives of U_{lam,x0} against lam^((N+p)/(N-p)) a(r)',
        passed=True,
        samples=len(upper),
        params={'p': p, 'dim': N, 'n_points': n_points, 'seed': seed, 'lambdas': list(lambdas)},
    )
    report.constants['upper_C'] = float(np.max(upper))
    report.constants['direction_A'] = float(np.min(lower_dir))
    report.constants['coordinate_A'] = float(np.min(lower_coord))
    if not math.isfinite(report.constants['upper_C']):
        report.fail('unbounded upper envelope constant')
    if report.constants['direction_A'] <= 0.0:
        report.fail('direction-grid lower envelope vanishes')
    if stated is not None:
        report.constants['laplacian_A'] = float(np.min(lower_lap))
        report.constants['laplacian_A_stated'] = stated
        if report.constants['laplacian_A'] <= 0.0:
            report.fail('Laplacian lower envelope vanishes')
        if report.constants['laplacian_A'] < stated * (1.0 - 1e-9):
            report.fail(f"Laplacian lower envelope {report.constants['laplacian_A']:.6g} "
                        f"below the closed-form constant {stated:.6g}")
        if report.constants['coordinate_A'] < stated / N * (1.0 - 1e-9):
            report.fail(f"coordinate-axis lower envelope {report.constants['coordinate_A']:.6g} "
                        f"below {stated / N:.6g}")
    else:
        report.notes.append('Laplacian lower bound applies to p >= 2 only; skipped')

    ball = [hessian_p_integral_ball(lam, profile) / lam ** (p * p / (N - p)) for lam in lambdas]
    report.constants.update({'ball_C_min': min(ball), 'ball_C_max': max(ball)})
    if not all(map(math.isfinite, ball)) or max(ball) / min(ball) > 2.0:
        report.fail(f'unstable Hessian integral bracket {min(ball):.4g}..{max(ball):.4g}')

    logger.info(f"Hessian bounds p={p}, N={N}: {report.constants}", extra={'stage': 'checks', 'p': p, 'dim': N})
    return report


# --- nodal interpolation decay and stability --------------------------------

@log_execution_time()
def check_interpolation_decay(p: float, N: int, lam: float = 1.0,
                              levels: Optional[Sequence[int]] = None,
                              rule: Optional[QuadratureRule] = None) -> CheckReport:
    """Rates h^2, h of the nodal interpolation error of U_lam and the local stability bound."""
    check_exponent(p, N)
    levels = _default_levels(N) if levels is None else levels
    field_ = ExtremalField(ExtremalParams.centered(lam, N), radial_profile(p, N))
    hs, err0, err1 = [], [], []
    worst_stability = 0.0
    for level in levels:
        mesh = build_ball_mesh(N, level)
        r = default_rule(N) if rule is None else rule
        u = interpolate(field_, mesh, zero_boundary=False)
        hs.append(mesh.h)
        err0.append(interpolation_error(field_, u, p, 0, r))
        err1.append(interpolation_error(field_, u, p, 1, r, grad_f=field_.gradient))

        # per element ||D I f||_{L^p(T)} against h_T^(-1+N/p) ||f||_{L^inf(T)}
        grads = np.linalg.norm(element_gradients(u), axis=1)
        local = grads * mesh.volumes ** (1.0 / p)
        pts = physical_points(mesh, r)
        sup = np.maximum(np.max(np.abs(field_(pts.reshape(-1, N))).reshape(mesh.n_elements, -1), axis=1),
                         np.max(np.abs(u.coeffs[mesh.elements]), axis=1))
        bound = mesh.h_T ** (-1.0 + N / p) * sup
        worst_stability = max(worst_stability, float(np.max(local / bound)))

    report = CheckReport(
        name='interpolation_decay',
        anchor='nodal interpolation error C h^(2-s) and local inverse estimate',
        passed=True,
        samples=len(hs),
        params={'p': p, 'dim': N, 'lambda': lam, 'levels': list(levels)},
    )
    s0, s1 = _log_log_slope(hs, err0), _log_log_slope(hs, err1)
    report.constants.update({'slope_s0': s0, 'slope_s1': s1, 'stability_constant': worst_stability})
    if s0 < 2.0 - 0.25:
        report.fail(f'L^p interpolation slope {s0:.3f} < 1.75')
    if s1 < 1.0 - 0.25:
        report.fail(f'W^(1,p) interpolation slope {s1:.3f} < 0.75')
    if worst_stability > 10.0:
        report.fail(f'local stability constant {worst_stability:.3f} > 10')
    logger.info(f"Interpolation decay p={p}, N={N}: {report.constants}", extra={'stage': 'checks', 'p': p, 'dim': N})
    return report


# --- deficit sandwich --------------------------------------------------------

@log_execution_time()
def check_deficit_sandwich(p: float, N: int, levels: Optional[Sequence[int]] = None,
                           rule: Optional[QuadratureRule] = None,
                           max_evals: int = 400) -> CheckReport:
    """Stability of deficit / lower and upper / deficit along the per-level witnesses."""
    check_exponent(p, N)
    levels = ((3, 4, 5) if N == 2 else (1, 2, 3)) if levels is None else levels
    profile = radial_profile(p, N)
    report = CheckReport(
        name='deficit_sandwich',
        anchor='deficit between quasi-norm lower and upper expressions',
        passed=True,
        params={'p': p, 'dim': N, 'levels': list(levels)},
    )
    lower_ratios, upper_ratios = [], []
    for level in levels:
        mesh = build_ball_mesh(N, level)
        lam = optimal_lambda(min(mesh.h, 0.5), p, N, LambdaMode.QUASI)
        u = interpolate_shifted(ExtremalField(ExtremalParams.centered(lam, N), profile), mesh)
        fit = nearest_extremal(u, p, Metric.SOBOLEV_P, rule, max_evals=max_evals)
        sandwich = deficit_sandwich(u, fit, p, rule)
        report.constants[f'level_{level}'] = sandwich.to_record()
        if sandwich.deficit < -1e-6:
            report.fail(f'negative deficit {sandwich.deficit:.3e} at level {level}')
        if sandwich.lower_ratio is None or sandwich.out_of_regime:
            report.notes.append(f'level {level}: ' + ('; '.join(sandwich.notes) or 'ratios undefined'))
            continue
        if sandwich.lower_ratio <= 0.0 or sandwich.upper_ratio <= 0.0:
            report.fail(f'nonpositive sandwich ratio at level {level}')
        lower_ratios.append(sandwich.lower_ratio)
        upper_ratios.append(sandwich.upper_ratio)

    report.samples = len(lower_ratios)
    if len(lower_ratios) >= 2:
        lo_spread = max(lower_ratios) / min(lower_ratios)
        up_spread = max(upper_ratios) / min(upper_ratios)
        report.constants.update({'lower_spread': lo_spread, 'upper_spread': up_spread})
        if lo_spread > SANDWICH_SPREAD or up_spread > SANDWICH_SPREAD:
            report.fail(f'ratio spread {max(lo_spread, up_spread):.3f} > {SANDWICH_SPREAD}')
    else:
        report.notes.append('fewer than two levels with defined ratios')
    logger.info(f"Deficit sandwich p={p}, N={N}: ratios lower={lower_ratios} upper={upper_ratios}",
                extra={'stage': 'checks', 'p': p, 'dim': N})
    return report
