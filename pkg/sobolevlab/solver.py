"""
Discrete Sobolev constant S_h(p, N) = min over V_h of ||Du||_p / ||u||_{p*}.

The quotient is minimized by preconditioned steepest descent on the
interior nodal values, started from the interpolated extremal witness.
For p < 2 the gradient term |Du|^p is regularized as (|Du|^2 + eps^2)^(p/2)
and eps is driven down a continuation schedule. Iterates are rescaled to
||u||_{p*} = 1 after every accepted step.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from sobolevlab.config import SolverOptions
from sobolevlab.extremals import (
    ExtremalField,
    ExtremalParams,
    LambdaMode,
    optimal_lambda,
    radial_profile,
)
from sobolevlab.errors import SolverError
from sobolevlab.fespace import FeFunction, element_gradients, interpolate_shifted
from sobolevlab.functionals import rayleigh
from sobolevlab.mesh import Mesh
from sobolevlab.quadrature import QuadratureRule, conical_rule, integrate_with_escalation
from utils.logging import get_logger, log_execution_time

logger = get_logger(__name__)

# optimal_lambda needs h < 1; the coarse meshes have h >= 1
WITNESS_H_CAP = 0.5
RESTART_PERTURBATION = 1e-3


@dataclass
class SolveResult:
    """Outcome of one discrete Sobolev-constant computation."""

    S_h: float
    u_h: FeFunction
    iterations: int
    converged: bool
    # R_0 at the witness and at every accepted iterate; restart_at indexes the
    # first entry after a seeded restart
    history: List[float] = field(default_factory=list)
    restart_at: Optional[int] = None
    witness_quotient: float = math.nan
    witness_lambda: float = math.nan
    gradient_norm: float = math.nan
    epsilon_gap: float = 0.0
    quadrature_order: int = 0
    quadrature_escalations: int = 0
    restarted: bool = False
    path: str = "descent"

    @property
    def mesh(self) -> Mesh:
        return self.u_h.mesh

    def to_record(self, p: float) -> dict:
        return {
            'S_h': self.S_h,
            'iterations': self.iterations,
            'converged': self.converged,
            'h': self.mesh.h,
            'p': p,
            'N': self.mesh.dim,
            'witness_quotient': self.witness_quotient,
            'witness_lambda': self.witness_lambda,
            'gradient_norm': self.gradient_norm,
            'epsilon_gap': self.epsilon_gap,
            'quadrature_order': self.quadrature_order,
            'quadrature_escalations': self.quadrature_escalations,
            'restarted': self.restarted,
            'restart_at': self.restart_at,
            'path': self.path,
        }


class QuotientProblem:
    """Regularized Rayleigh quotient as a function of the interior nodal values."""

    def __init__(self, mesh: Mesh, p: float, rule: QuadratureRule):
        if not (1.0 < p < mesh.dim):
            raise SolverError(f"Exponent p={p} outside (1, N={mesh.dim})")
        self.mesh = mesh
        self.p = p
        self.p_star = mesh.dim * p / (mesh.dim - p)
        self.rule = rule
        self.interior = mesh.interior_vertices
        self._grads = mesh.basis_gradients
        self._w = rule.normalized_weights
        self._stiffness_lu = None
        self._stiffness = None

    @property
    def size(self) -> int:
        return len(self.interior)

    def full(self, x: np.ndarray) -> np.ndarray:
        coeffs = np.zeros(self.mesh.n_vertices)
        coeffs[self.interior] = x
        return coeffs

    def restrict(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs)[self.interior]

    def _element_data(self, x: np.ndarray):
        local = self.full(x)[self.mesh.elements]
        g = np.einsum('ein,ei->en', self._grads, local)
        values = local @ self.rule.points.T
        return local, g, values

    def _numerator_terms(self, g: np.ndarray, eps: float) -> np.ndarray:
        return self.mesh.volumes * (np.einsum('en,en->e', g, g) + eps * eps) ** (self.p / 2.0)

    def _denominator_terms(self, values: np.ndarray) -> np.ndarray:
        return self.mesh.volumes * (np.abs(values) ** self.p_star @ self._w)

    def quotient(self, x: np.ndarray, eps: float = 0.0) -> float:
        _, g, values = self._element_data(x)
        A = math.fsum(self._numerator_terms(g, eps))
        B = math.fsum(self._denominator_terms(values))
        if B <= 0.0:
            return math.inf
        return A ** (1.0 / self.p) * B ** (-1.0 / self.p_star)

    def denominator(self, x: np.ndarray) -> float:
        _, _, values = self._element_data(x)
        return math.fsum(self._denominator_terms(values))

    def gradient(self, x: np.ndarray, eps: float = 0.0) -> Tuple[float, np.ndarray]:
        """R_eps(x) and its partial derivatives with respect to the interior values."""
        p, ps = self.p, self.p_star
        mesh = self.mesh
        _, g, values = self._element_data(x)

        sq = np.einsum('en,en->e', g, g) + eps * eps
        A = math.fsum(mesh.volumes * sq ** (p / 2.0))
        B = math.fsum(self._denominator_terms(values))
        if A <= 0.0 or B <= 0.0:
            raise SolverError("Quotient gradient undefined for the zero function")
        R = A ** (1.0 / p) * B ** (-1.0 / ps)

        # dA/dc: |T| p (|g|^2+eps^2)^((p-2)/2) g . grad(phi_i)
        coef = np.zeros_like(sq)
        nz = sq > 0
        coef[nz] = mesh.volumes[nz] * p * sq[nz] ** ((p - 2.0) / 2.0)
        dA_local = coef[:, None] * np.einsum('ein,en->ei', self._grads, g)

        # dB/dc: |T| sum_q w_q p* |u_q|^(p*-1) sign(u_q) lambda_i(x_q)
        dens = ps * np.sign(values) * np.abs(values) ** (ps - 1.0)
        dB_local = mesh.volumes[:, None] * ((dens * self._w) @ self.rule.points)

        local = dA_local / (p * A) - dB_local / (ps * B)
        full = np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
        return R, R * full[self.interior]

    def stiffness(self) -> sp.csc_matrix:
        """P1 Laplace stiffness restricted to the interior nodes."""
        if self._stiffness is None:
            mesh = self.mesh
            local = mesh.volumes[:, None, None] * np.einsum('ein,ejn->eij', self._grads, self._grads)
            n = mesh.dim + 1
            rows = np.repeat(mesh.elements, n, axis=1).ravel()
            cols = np.tile(mesh.elements, (1, n)).ravel()
            K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2).tocsr()
            self._stiffness = K[self.interior][:, self.interior].tocsc()
        return self._stiffness

    def precondition(self, g: np.ndarray) -> np.ndarray:
        if self._stiffness_lu is None:
            self._stiffness_lu = splu(self.stiffness())
        return self._stiffness_lu.solve(g)

    def energy_norm(self, x: np.ndarray) -> float:
        return float(math.sqrt(max(x @ (self.stiffness() @ x), 0.0)))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        B = self.denominator(x)
        if B <= 0.0:
            raise SolverError("Cannot normalize the zero function")
        return x * B ** (-1.0 / self.p_star)


def quotient_gradient(u: FeFunction, p: float, epsilon: float = 0.0,
                      rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Partial derivatives of R_eps(u) with respect to the interior nodal values.

    Args:
        u: Nonzero finite element function
        p: Exponent
        epsilon: Regularization of |Du|^p
        rule: Quadrature rule for the p*-norm (dimension default if None)

    Returns:
        Vector ordered like ``u.mesh.interior_vertices``
    """
    if u.is_zero:
        raise SolverError("Quotient gradient undefined for the zero function")
    rule = rule or conical_rule(u.mesh.dim, SolverOptions().order_for(u.mesh.dim))
    problem = QuotientProblem(u.mesh, p, rule)
    _, grad = problem.gradient(problem.restrict(u.coeffs), epsilon)
    return grad


def witness_function(mesh: Mesh, p: float, mode: LambdaMode = LambdaMode.QUASI) -> Tuple[FeFunction, float]:
    """Interpolated, boundary-shifted extremal at the balancing concentration lam*(h)."""
    lam = optimal_lambda(min(mesh.h, WITNESS_H_CAP), p, mesh.dim, mode)
    field_ = ExtremalField(ExtremalParams.centered(lam, mesh.dim), radial_profile(p, mesh.dim))
    return interpolate_shifted(field_, mesh), lam


class _Descent:
    """Preconditioned steepest descent with Barzilai-Borwein steps and Armijo backtracking."""

    def __init__(self, problem: QuotientProblem, opts: SolverOptions, rng: np.random.Generator):
        self.problem = problem
        self.opts = opts
        self.rng = rng
        self.iterations = 0
        self.restarted = False
        self.best_x: Optional[np.ndarray] = None
        self.best_R = math.inf
        self.history: List[float] = []
        self.restart_at: Optional[int] = None

    def _track(self, x: np.ndarray):
        R0 = self.problem.quotient(x, 0.0)
        if R0 < self.best_R:
            self.best_R = R0
            self.best_x = x.copy()
        self.history.append(R0)

    def _gradient_norm(self, x: np.ndarray, R: float, g: np.ndarray, d: np.ndarray) -> float:
        # scale-free: |g|_{K^-1} |x|_K / R
        return math.sqrt(max(-(g @ d), 0.0)) * self.problem.energy_norm(x) / R

    def run_stage(self, x: np.ndarray, eps: float) -> Tuple[np.ndarray, bool, float]:
        """Minimize R_eps from x; returns (x, converged, gradient norm)."""
        problem, opts = self.problem, self.opts
        R, g = problem.gradient(x, eps)
        d = -problem.precondition(g)
        alpha = 0.1 * problem.energy_norm(x) / max(problem.energy_norm(d), 1e-300)
        stalls = 0
        gnorm = self._gradient_norm(x, R, g, d)

        while self.iterations < opts.max_iters:
            self.iterations += 1
            slope = g @ d
            accepted = False
            step = alpha
            for _ in range(opts.max_backtracks):
                trial = x + step * d
                R_trial = problem.quotient(trial, eps)
                if R_trial <= R + opts.armijo_c1 * step * slope:
                    accepted = True
                    break
                step *= 0.5

            if accepted:
                x_new = problem.normalize(trial)
                R_new, g_new = problem.gradient(x_new, eps)
                d_new = -problem.precondition(g_new)
                s = x_new - x
                y = g_new - g
                sy = s @ y
                alpha = (s @ (problem.stiffness() @ s)) / sy if sy > 0 else 2.0 * step
                decrease = (R - R_new) / R_new
                x, R, g, d = x_new, R_new, g_new, d_new
                gnorm = self._gradient_norm(x, R, g, d)
                self._track(x)
            else:
                decrease = 0.0
                alpha = 0.1 * problem.energy_norm(x) / max(problem.energy_norm(d), 1e-300)

            if decrease < opts.step_tol:
                if gnorm < opts.grad_tol:
                    return x, True, gnorm
                stalls += 1
            else:
                stalls = 0

            if stalls >= opts.stall_limit:
                if self.restarted:
                    logger.warning(f"Line search stalled again at eps={eps:.2e}; stopping stage")
                    return x, False, gnorm
                logger.info(f"Line search stalled for {stalls} iterations; seeded restart")
                self.restarted = True
                self.restart_at = len(self.history)
                scale = RESTART_PERTURBATION * np.max(np.abs(x))
                x = problem.normalize(x + scale * self.rng.standard_normal(x.shape))
                R, g = problem.gradient(x, eps)
                d = -problem.precondition(g)
                alpha = 0.1 * problem.energy_norm(x) / max(problem.energy_norm(d), 1e-300)
                stalls = 0

        return x, False, gnorm


def _verify_order(order: int, u: FeFunction, p: float) -> Tuple[int, int]:
    """Order-doubling check of ||u||_{p*}^{p*}; returns (accepted order, escalations)."""
    N = u.mesh.dim
    ps = N * p / (N - p)

    def integral(rule: QuadratureRule) -> float:
        values = u.coeffs[u.mesh.elements] @ rule.points.T
        return math.fsum(u.mesh.volumes * (np.abs(values) ** ps @ rule.normalized_weights))

    result = integrate_with_escalation(integral, N, order)
    return result.order, result.escalations


@log_execution_time()
def solve_Sh(mesh: Mesh, p: float, opts: Optional[SolverOptions] = None) -> SolveResult:
    """Compute S_h(p, N) on ``mesh``.

    Args:
        mesh: Ball mesh
        p: Exponent, 1 < p < N
        opts: Solver options (defaults if None)

    Returns:
        SolveResult; non-convergence is flagged, the best iterate is returned

    Raises:
        SolverError: If p is out of range or the mesh has no interior vertices
    """
    opts = opts or SolverOptions()
    N = mesh.dim
    if not (1.0 < p < N):
        raise SolverError(f"Exponent p={p} outside (1, N={N})", {'p': p, 'dim': N})
    if len(mesh.interior_vertices) == 0:
        raise SolverError("Mesh has no interior vertices")

    witness, lam = witness_function(mesh, p)
    order, escalations = _verify_order(opts.order_for(N), witness, p)
    rule = conical_rule(N, order)
    problem = QuotientProblem(mesh, p, rule)

    x = problem.normalize(problem.restrict(witness.coeffs))
    witness_R = problem.quotient(x, 0.0)

    descent = _Descent(problem, opts, np.random.default_rng(opts.seed))
    descent.best_x, descent.best_R = x.copy(), witness_R
    descent.history.append(witness_R)

    if p < 2.0:
        start = FeFunction(mesh, problem.full(x))
        mean_grad = float(np.average(np.linalg.norm(element_gradients(start), axis=1), weights=mesh.volumes))
        schedule = [f * mean_grad for f in opts.epsilon_schedule]
    else:
        schedule = [0.0]

    converged = False
    gnorm = math.nan
    for eps in schedule:
        logger.debug(f"Descent stage eps={eps:.3e} (iteration {descent.iterations})")
        x, converged, gnorm = descent.run_stage(x, eps)
        if descent.iterations >= opts.max_iters:
            break

    best = descent.best_x
    epsilon_gap = abs(problem.quotient(best, schedule[-1]) - problem.quotient(best, 0.0))
    u_h = FeFunction(mesh, problem.full(best))

    final_order, final_escalations = _verify_order(order, u_h, p)
    S_h = rayleigh(u_h, p, conical_rule(N, final_order))

    if not converged:
        logger.warning(
            f"Solver did not converge in {descent.iterations} iterations (h={mesh.h:.4g}, p={p})",
            extra={'p': p, 'dim': N}
        )
    logger.info(
        f"S_h={S_h:.12g} witness={witness_R:.12g} iterations={descent.iterations} converged={converged}",
        extra={'p': p, 'dim': N, 'stage': 'solve'}
    )

    return SolveResult(
        S_h=S_h,
        u_h=u_h,
        iterations=descent.iterations,
        converged=converged,
        history=descent.history,
        restart_at=descent.restart_at,
        witness_quotient=witness_R,
        witness_lambda=lam,
        gradient_norm=gnorm,
        epsilon_gap=epsilon_gap,
        quadrature_order=final_order,
        quadrature_escalations=escalations + final_escalations,
        restarted=descent.restarted,
        path='restart' if descent.restarted else 'descent',
    )
