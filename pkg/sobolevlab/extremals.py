"""
Aubin-Talenti extremals of the Sobolev inequality on R^N.

The normalized radial profile is

    U(x) = u0(|x|),  u0(r) = k0 (1 + r^q)^(-(N-p)/p),  q = p/(p-1),

with k0 chosen so that ||DU||_{L^p(R^N)} = 1. The minimizer manifold is
U_{c,lam,x0}(x) = c * lam * U(lam^beta (x - x0)), beta = p/(N-p); every
member attains S(p, N) = 1 / ||U||_{L^{p*}}.

Radial integrals of the form int r^a (1 + r^b)^(-c) dr are computed by
adaptive quadrature after the substitutions s = r^b / (1 + r^b) below r = 1
and t = 1 / (1 + r^b) above it, each landing in [0, 1/2]. Beta-function
closed forms are kept as independent oracles only.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from sobolevlab.errors import ExtremalError
from utils.logging import get_logger

logger = get_logger(__name__)

QUAD_RTOL = 1e-13
QUAD_LIMIT = 500
HESSIAN_GUARD_RADIUS = 1e-12


class LambdaMode(str, Enum):
    """Balancing rule for the concentration parameter of the interpolated extremal."""
    SOBOLEV = "sobolev"
    QUASI = "quasi"


def check_exponent(p: float, N: int):
    if not (1.0 < p < N):
        raise ExtremalError(f"Exponent p={p} outside (1, N={N})", {'p': p, 'dim': N})


def p_star(p: float, N: int) -> float:
    """Sobolev conjugate Np/(N-p)."""
    check_exponent(p, N)
    return N * p / (N - p)


def q_exponent(p: float) -> float:
    return p / (p - 1.0)


def beta_exponent(p: float, N: int) -> float:
    """Dilation exponent p/(N-p) of the extremal family."""
    return p / (N - p)


def alpha_exponent(p: float, N: int) -> float:
    """Sharp rate exponent of S_h - S: 2(N-p)/(N+p-2)."""
    check_exponent(p, N)
    return 2.0 * (N - p) / (N + p - 2.0)


def gamma_exponent(p: float, N: int) -> float:
    """Distance exponent (N-p)/(N+p(p-2))."""
    check_exponent(p, N)
    return (N - p) / (N + p * (p - 2.0))


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2.0) / special.gamma(N / 2.0)


def radial_moment(a: float, b: float, c: float, r_lo: float = 0.0, r_hi: float = math.inf) -> float:
    """int_{r_lo}^{r_hi} r^a (1 + r^b)^(-c) dr by weighted adaptive quadrature.

    The range is split at r = 1. Below it the integrand becomes
    (1/b) s^(x-1) (1-s)^(c-x-1) in s = r^b/(1+r^b), above it
    (1/b) t^(c-x-1) (1-t)^(x-1) in t = 1/(1+r^b), with x = (a+1)/b. Both
    variables stay in [0, 1/2], so an endpoint singularity only ever sits at
    0 and is taken by the algebraic weight of QUADPACK.
    """
    x = (a + 1.0) / b
    if not (x > 0.0 and c - x > 0.0):
        raise ExtremalError(f"Radial moment diverges for a={a}, b={b}, c={c}", {'a': a, 'b': b, 'c': c})

    def to_unit(r):
        if math.isinf(r):
            return 0.0
        return 1.0 / (1.0 + r ** b)

    def to_s(r):
        rb = r ** b
        return rb / (1.0 + rb)

    total = 0.0
    if r_lo < 1.0 and r_hi > r_lo:
        total += _beta_piece(x - 1.0, c - x - 1.0, to_s(r_lo), to_s(min(r_hi, 1.0)))
    if r_hi > 1.0 and r_hi > r_lo:
        total += _beta_piece(c - x - 1.0, x - 1.0, to_unit(r_hi), to_unit(max(r_lo, 1.0)))
    return total / b


def _beta_piece(e_near: float, e_far: float, lo: float, hi: float) -> float:
    """int_lo^hi u^e_near (1-u)^e_far du for 0 <= lo < hi <= 1/2, as int_0^hi - int_0^lo."""
    if hi <= lo:
        return 0.0

    def from_zero(upper):
        if upper <= 0.0:
            return 0.0
        value, _ = integrate.quad(lambda u: (1.0 - u) ** e_far, 0.0, upper, weight='alg', wvar=(e_near, 0.0),
                                  epsabs=0.0, epsrel=QUAD_RTOL, limit=QUAD_LIMIT)
        return value

    return from_zero(hi) - from_zero(lo)


def radial_moment_beta(a: float, b: float, c: float) -> float:
    """Closed form (1/b) B((a+1)/b, c - (a+1)/b) of radial_moment over (0, inf)."""
    x = (a + 1.0) / b
    return special.beta(x, c - x) / b


def _radial_quad(fun: Callable[[float], float], scale: float) -> float:
    """int_0^inf fun(r) dr split at ``scale``, by plain adaptive quadrature in r."""
    head, _ = integrate.quad(fun, 0.0, scale, epsabs=0.0, epsrel=1e-12, limit=QUAD_LIMIT)
    tail, _ = integrate.quad(fun, scale, math.inf, epsabs=0.0, epsrel=1e-12, limit=QUAD_LIMIT)
    return head + tail


@dataclass(frozen=True)
class RadialProfile:
    """Normalized radial profile u0 for a given (p, N)."""

    p: float
    N: int
    k0: float

    @property
    def q(self) -> float:
        return q_exponent(self.p)

    @property
    def beta(self) -> float:
        return beta_exponent(self.p, self.N)

    @property
    def p_star(self) -> float:
        return p_star(self.p, self.N)

    @property
    def K(self) -> float:
        """|u0'(r)| = K r a(r)."""
        return self.k0 * (self.N - self.p) / (self.p - 1.0)

    def u0(self, r):
        r = np.asarray(r, dtype=float)
        return self.k0 * (1.0 + r ** self.q) ** (-(self.N - self.p) / self.p)

    def envelope_a(self, r):
        """a(r) = |u0'(r)| / (K r) = r^((2-p)/(p-1)) (1 + r^q)^(-N/p)."""
        r = np.asarray(r, dtype=float)
        return r ** ((2.0 - self.p) / (self.p - 1.0)) * (1.0 + r ** self.q) ** (-self.N / self.p)

    def du0(self, r):
        r = np.asarray(r, dtype=float)
        return -self.K * r ** (1.0 / (self.p - 1.0)) * (1.0 + r ** self.q) ** (-self.N / self.p)

    def d2u0(self, r):
        r = np.asarray(r, dtype=float)
        t = r ** self.q
        return -(self.K / (self.p - 1.0)) * self.envelope_a(r) / (1.0 + t) * (1.0 - (self.N - 1.0) * t)

    def grad_norm_p(self, lam: float = 1.0) -> float:
        """Whole-space int |D(lam U(lam^beta x))|^p by direct radial quadrature in r."""
        p, N, beta = self.p, self.N, self.beta

        def fun(r):
            return abs(lam ** (1.0 + beta) * float(self.du0(lam ** beta * r))) ** p * r ** (N - 1)

        return sphere_area(N) * _radial_quad(fun, lam ** (-beta))

    def lpstar_norm_pstar(self, lam: float = 1.0) -> float:
        """Whole-space int |lam U(lam^beta x)|^{p*} by direct radial quadrature in r."""
        N, beta, ps = self.N, self.beta, self.p_star

        def fun(r):
            return (lam * float(self.u0(lam ** beta * r))) ** ps * r ** (N - 1)

        return sphere_area(N) * _radial_quad(fun, lam ** (-beta))


def _grad_moment_args(p: float, N: int) -> Tuple[float, float, float]:
    q = q_exponent(p)
    return N - 1.0 + q, q, float(N)


def compute_k0(p: float, N: int) -> float:
    """Normalization constant with ||DU||_{L^p(R^N)} = 1.

    Args:
        p: Exponent, 1 < p < N
        N: Dimension

    Returns:
        k0 > 0

    Raises:
        ExtremalError: If p is outside (1, N)
    """
    check_exponent(p, N)
    K1 = (N - p) / (p - 1.0)
    moment = radial_moment(*_grad_moment_args(p, N))
    return (sphere_area(N) * K1 ** p * moment) ** (-1.0 / p)


def k0_beta_oracle(p: float, N: int) -> float:
    check_exponent(p, N)
    K1 = (N - p) / (p - 1.0)
    return (sphere_area(N) * K1 ** p * radial_moment_beta(*_grad_moment_args(p, N))) ** (-1.0 / p)


@lru_cache(maxsize=None)
def radial_profile(p: float, N: int) -> RadialProfile:
    """Cached normalized profile for (p, N)."""
    return RadialProfile(p, N, compute_k0(p, N))


@lru_cache(maxsize=None)
def sobolev_constant_ref(p: float, N: int) -> float:
    """S(p, N) = 1 / ||U||_{L^{p*}(R^N)} for the normalized profile."""
    check_exponent(p, N)
    profile = radial_profile(p, N)
    ps = profile.p_star
    norm = sphere_area(N) * profile.k0 ** ps * radial_moment(N - 1.0, profile.q, float(N))
    value = norm ** (-1.0 / ps)
    logger.debug(f"S_ref(p={p}, N={N}) = {value:.15g}")
    return value


def sobolev_constant_beta_oracle(p: float, N: int) -> float:
    check_exponent(p, N)
    ps = p_star(p, N)
    k0 = k0_beta_oracle(p, N)
    norm = sphere_area(N) * k0 ** ps * radial_moment_beta(N - 1.0, q_exponent(p), float(N))
    return norm ** (-1.0 / ps)


def talenti_constant(p: float, N: int) -> float:
    """Sharp Sobolev constant from Talenti's closed formula (returned as S = 1/C)."""
    check_exponent(p, N)
    C = (
        math.pi ** -0.5 * N ** (-1.0 / p)
        * ((p - 1.0) / (N - p)) ** (1.0 - 1.0 / p)
        * (special.gamma(1 + N / 2.0) * special.gamma(N)
           / (special.gamma(N / p) * special.gamma(1 + N - N / p))) ** (1.0 / N)
    )
    return 1.0 / C


@dataclass(frozen=True)
class ExtremalParams:
    """Parameters (c, lam, x0) of U_{c,lam,x0}."""

    c: float
    lam: float
    x0: Tuple[float, ...]

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.ravel(self.x0))
        object.__setattr__(self, 'x0', x0)
        if not (math.isfinite(self.c) and math.isfinite(self.lam) and all(map(math.isfinite, x0))):
            raise ExtremalError("Extremal parameters must be finite", {'c': self.c, 'lam': self.lam})
        if self.lam <= 0:
            raise ExtremalError(f"Concentration parameter must be positive, got {self.lam}")

    @classmethod
    def centered(cls, lam: float, dim: int, c: float = 1.0) -> 'ExtremalParams':
        return cls(c, lam, (0.0,) * dim)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.x0)

    def scaled(self, factor: float) -> 'ExtremalParams':
        return ExtremalParams(self.c * factor, self.lam, self.x0)


class ExtremalField:
    """Point evaluation of U_{c,lam,x0} and its derivatives on (n, N) point arrays."""

    def __init__(self, params: ExtremalParams, profile: RadialProfile):
        if len(params.x0) != profile.N:
            raise ExtremalError(f"x0 has {len(params.x0)} components, expected {profile.N}")
        self.params = params
        self.profile = profile

    @property
    def dim(self) -> int:
        return self.profile.N

    def _offsets(self, x: np.ndarray):
        y = np.atleast_2d(np.asarray(x, dtype=float)) - self.params.center
        r = np.linalg.norm(y, axis=1)
        return y, r, self.params.lam ** self.profile.beta * r

    def __call__(self, x: np.ndarray) -> np.ndarray:
        _, _, rho = self._offsets(x)
        return self.params.c * self.params.lam * self.profile.u0(rho)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """DU = -c K lam^(1+2 beta) a(rho) y, zero at x0."""
        prof, lam = self.profile, self.params.lam
        y, r, rho = self._offsets(x)
        scale = self.params.c * lam ** (1.0 + prof.beta)
        # |DU| = |c| lam^(1+beta) |u0'(rho)| along y/|y|
        with np.errstate(invalid='ignore', divide='ignore'):
            unit = np.where(r[:, None] > 0, y / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return scale * prof.du0(rho)[:, None] * unit

    def grad_norm(self, x: np.ndarray) -> np.ndarray:
        prof = self.profile
        _, _, rho = self._offsets(x)
        return abs(self.params.c) * self.params.lam ** (1.0 + prof.beta) * np.abs(prof.du0(rho))

    def hessian(self, x: np.ndarray) -> np.ndarray:
        """D^2 U = c lam^(1+2 beta) [u0''(rho) e e^T + (u0'(rho)/rho)(I - e e^T)], e = y/|y|."""
        prof, lam = self.profile, self.params.lam
        y, r, rho = self._offsets(x)
        scale = self.params.c * lam ** (1.0 + 2.0 * prof.beta)
        n, N = y.shape

        near = rho < HESSIAN_GUARD_RADIUS
        rho_eval = np.where(near, HESSIAN_GUARD_RADIUS, rho)
        unit = np.zeros_like(y)
        unit[~near] = y[~near] / r[~near, None]
        unit[near, 0] = 1.0

        radial = prof.d2u0(rho_eval)
        tangential = -prof.K * prof.envelope_a(rho_eval)
        if prof.p < 2.0:
            # both terms vanish at the center for p < 2
            radial = np.where(rho == 0.0, 0.0, radial)
            tangential = np.where(rho == 0.0, 0.0, tangential)

        outer = np.einsum('ni,nj->nij', unit, unit)
        eye = np.broadcast_to(np.eye(N), (n, N, N))
        return scale * (radial[:, None, None] * outer + tangential[:, None, None] * (eye - outer))

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return np.trace(self.hessian(x), axis1=1, axis2=2)


def eval_U(params: ExtremalParams, x: np.ndarray, profile: RadialProfile) -> np.ndarray:
    return ExtremalField(params, profile)(x)


def eval_gradU(params: ExtremalParams, x: np.ndarray, profile: RadialProfile) -> np.ndarray:
    return ExtremalField(params, profile).gradient(x)


def eval_hessU(params: ExtremalParams, x: np.ndarray, profile: RadialProfile) -> np.ndarray:
    return ExtremalField(params, profile).hessian(x)


def hessian_envelope_a(r, p: float, N: int):
    """a(r) = r^((2-p)/(p-1)) (1 + r^(p/(p-1)))^(-N/p), r > 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ExtremalError("hessian_envelope_a requires r > 0")
    q = q_exponent(p)
    return r ** ((2.0 - p) / (p - 1.0)) * (1.0 + r ** q) ** (-N / p)


def _cumulative_fraction_complement(profile: RadialProfile, R: np.ndarray) -> np.ndarray:
    """Share of int |DU|^p outside the radius R (scaled variable), as a regularized incomplete Beta."""
    N, p, q = profile.N, profile.p, profile.q
    A = N / q + 1.0
    B = N / p - 1.0
    R = np.asarray(R, dtype=float)
    with np.errstate(over='ignore'):
        one_minus_s = 1.0 / (1.0 + R ** q)
    return special.betainc(B, A, one_minus_s)


def _sphere_directions(N: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit directions and weights averaging to one over the sphere."""
    if N == 2:
        theta = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(theta), np.sin(theta)]), np.full(n, 1.0 / n)
    mu, wmu = special.roots_legendre(n)
    phi = 2.0 * np.pi * np.arange(2 * n) / (2 * n)
    M, P = np.meshgrid(mu, phi, indexing='ij')
    s = np.sqrt(1.0 - M ** 2)
    dirs = np.column_stack([(s * np.cos(P)).ravel(), (s * np.sin(P)).ravel(), M.ravel()])
    weights = np.outer(wmu / 2.0, np.full(2 * n, 1.0 / (2 * n))).ravel()
    return dirs, weights


def _off_center_tail_fraction(profile: RadialProfile, lam: float, x0: np.ndarray, n: int) -> float:
    """Fraction of int |DU_{lam,x0}|^p lying outside the unit ball, by rays from x0."""
    dirs, weights = _sphere_directions(profile.N, n)
    b = dirs @ x0
    disc = b ** 2 - (x0 @ x0 - 1.0)
    hit = disc > 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t_plus = np.where(hit, -b + root, 0.0)
    t_minus = np.where(hit, -b - root, 0.0)
    t_plus = np.clip(t_plus, 0.0, None)
    t_minus = np.clip(t_minus, 0.0, None)

    scale = lam ** profile.beta
    # fraction inside along each ray = tail(t_minus) - tail(t_plus)
    inside = (_cumulative_fraction_complement(profile, scale * t_minus)
              - _cumulative_fraction_complement(profile, scale * t_plus))
    inside = np.where(hit, inside, 0.0)
    return float(1.0 - np.dot(weights, inside))


def _off_center_tail(profile: RadialProfile, lam: float, x0: np.ndarray, rtol: float = 1e-9) -> float:
    n = 64 if profile.N == 2 else 16
    n_max = 2 ** 16 if profile.N == 2 else 1024
    previous = _off_center_tail_fraction(profile, lam, x0, n)
    while n < n_max:
        n *= 2
        current = _off_center_tail_fraction(profile, lam, x0, n)
        if abs(current - previous) <= rtol * max(abs(current), 1e-300) or abs(current - previous) < 1e-15:
            return current
        previous = current
    logger.warning(f"Angular resolution limit reached for tail at lam={lam}, x0={x0.tolist()}")
    return previous


def tail_integral_p(params: ExtremalParams, profile: RadialProfile) -> float:
    """int_{|x|>1} |DU_{c,lam,x0}|^p.

    Centered extremals use the radial moment beyond lam^beta; off-center
    ones integrate along rays from x0 with angular resolution doubled until
    two successive values agree.
    """
    c_p = abs(params.c) ** profile.p
    x0 = params.center
    if not np.any(x0):
        arg = _grad_moment_args(profile.p, profile.N)
        K1 = (profile.N - profile.p) / (profile.p - 1.0)
        mass = sphere_area(profile.N) * (profile.k0 * K1) ** profile.p
        return c_p * mass * radial_moment(*arg, r_lo=params.lam ** profile.beta)
    return c_p * _off_center_tail(profile, params.lam, x0)


def interior_integral_p(params: ExtremalParams, profile: RadialProfile) -> float:
    """int_{|x|<1} |DU_{c,lam,x0}|^p (directly, without subtracting the tail)."""
    c_p = abs(params.c) ** profile.p
    x0 = params.center
    if not np.any(x0):
        arg = _grad_moment_args(profile.p, profile.N)
        K1 = (profile.N - profile.p) / (profile.p - 1.0)
        mass = sphere_area(profile.N) * (profile.k0 * K1) ** profile.p
        return c_p * mass * radial_moment(*arg, r_hi=params.lam ** profile.beta)
    return c_p * (1.0 - _off_center_tail(profile, params.lam, x0))


def hessian_p_integral_ball(lam: float, profile: RadialProfile) -> float:
    """int_{|x|<1} |D^2 U_lam|^p with the Frobenius norm, for the centered extremal."""
    p, N, beta = profile.p, profile.N, profile.beta

    def fun(rho):
        if rho == 0.0:
            return 0.0
        radial = float(profile.d2u0(rho))
        tangential = float(profile.du0(rho)) / rho
        return (radial ** 2 + (N - 1) * tangential ** 2) ** (p / 2.0) * rho ** (N - 1)

    upper = lam ** beta
    points = [1.0] if upper > 1.0 else None
    value, _ = integrate.quad(fun, 0.0, upper, epsabs=0.0, epsrel=1e-10, limit=QUAD_LIMIT, points=points)
    return sphere_area(N) * lam ** (p * p / (N - p)) * value


def optimal_lambda(h: float, p: float, N: int, mode: LambdaMode = LambdaMode.QUASI) -> float:
    """Concentration parameter balancing the tail against the interpolation error.

    SOBOLEV: lam = h^(-(p-1)(N-p)/(N+p^2-2p))
    QUASI:   lam = h^(-2(p-1)(N-p)/(p(N+p-2))), i.e. lam^(-p/(p-1)) = (h lam^(p/(N-p)))^2
    """
    check_exponent(p, N)
    if not (0.0 < h < 1.0):
        raise ExtremalError(f"Mesh size must satisfy 0 < h < 1, got {h}")
    mode = LambdaMode(mode)
    if mode is LambdaMode.SOBOLEV:
        exponent = -(p - 1.0) * (N - p) / (N + p * p - 2.0 * p)
    else:
        exponent = -2.0 * (p - 1.0) * (N - p) / (p * (N + p - 2.0))
    return h ** exponent


def sample_ball(n: int, N: int, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
    """Uniform random points in the ball of given radius."""
    g = rng.standard_normal((n, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return radius * g * rng.random(n)[:, None] ** (1.0 / N)


def random_params(rng: np.random.Generator, N: int, n: int = 1,
                  lam_range: Sequence[float] = (0.5, 8.0), max_center: float = 0.5):
    """Random extremal parameters (log-uniform lam) for property tests."""
    out = []
    for _ in range(n):
        c = float(rng.uniform(-3.0, 3.0)) or 1.0
        lam = float(np.exp(rng.uniform(np.log(lam_range[0]), np.log(lam_range[1]))))
        x0 = sample_ball(1, N, rng, max_center)[0]
        out.append(ExtremalParams(c, lam, tuple(x0)))
    return out
