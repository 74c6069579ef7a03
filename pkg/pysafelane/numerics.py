"""
Numerical kernel shared by the control layers: dense convex QP, small LPs, polytope operations, matrix exponential,
Riccati solver and the fixed-step RK4 integrator.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import quadprog
import scipy.linalg
from scipy.optimize import linprog

from .errors import IntegrationFault, NumericalError, ParameterDomainError

log = logging.getLogger(__name__)

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'
UNBOUNDED = 'unbounded'
ITERATION_LIMIT = 'iteration-limit'

QP_REGULARIZATION = 1e-9
DARE_TOLERANCE = 1e-10
DARE_MAX_ITERATIONS = 10000
ROW_TOLERANCE = 1e-9


@dataclass
class QpProblem:
    """min 0.5 z'Hz + q'z  subject to  Fz <= g."""
    H: np.ndarray
    q: np.ndarray
    F: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        n = self.q.shape[0]
        if self.F is None or np.size(self.F) == 0:
            self.F = np.zeros((0, n))
            self.g = np.zeros(0)
        else:
            self.F = np.asarray(self.F, dtype=float).reshape(-1, n)
            self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.H.shape != (n, n):
            raise ParameterDomainError('Hessian must be {n}x{n}, got {shape}'.format(n=n, shape=self.H.shape))
        if self.F.shape[0] != self.g.shape[0]:
            raise ParameterDomainError('constraint rows and bounds differ in length')
        if not np.allclose(self.H, self.H.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(self.H).max())):
            raise ParameterDomainError('Hessian is not symmetric')


@dataclass
class QpSolution:
    z: np.ndarray
    status: str
    active: tuple = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = math.nan

    @property
    def optimal(self):
        return self.status == OPTIMAL


@dataclass
class LpSolution:
    value: float
    x: Optional[np.ndarray]
    status: str


def solve_qp(problem):
    """
    Solves a strictly convex dense QP with the Goldfarb-Idnani dual active-set method. The Hessian is regularized by
    1e-9*I only when it is not numerically positive definite. Infeasibility is reported in the status, never raised.
    """
    H, q, F, g = problem.H, problem.q, problem.F, problem.g
    n, m = q.shape[0], F.shape[0]
    C = np.ascontiguousarray(-F.T) if m else None
    b = np.ascontiguousarray(-g) if m else None
    for reg in (0.0, QP_REGULARIZATION):
        G = H + reg * np.eye(n) if reg else H.copy()
        try:
            z, _, _, _, lagrangian, iact = quadprog.solve_qp(G, -q, C, b, 0)
        except ValueError as err:
            message = str(err)
            if 'inconsistent' in message:
                return QpSolution(z=np.full(n, math.nan), status=INFEASIBLE)
            if 'positive definite' in message and not reg:
                log.debug('QP Hessian not positive definite, regularizing by %g', QP_REGULARIZATION)
                continue
            raise NumericalError('QP solver failed: {0}'.format(message))
        multipliers = np.asarray(lagrangian, dtype=float) if m else np.zeros(0)
        active = tuple(sorted(int(i) - 1 for i in iact if i > 0)) if m else ()
        objective = float(0.5 * z @ H @ z + q @ z)
        return QpSolution(z=np.asarray(z, dtype=float), status=OPTIMAL, active=active,
                          multipliers=multipliers, objective=objective)
    raise NumericalError('QP Hessian is not positive definite after regularization')


def kkt_residuals(problem, solution):
    """Returns (stationarity, complementarity, primal violation) residuals of a QP solution."""
    z, lam = solution.z, solution.multipliers
    grad = problem.H @ z + problem.q
    if problem.F.shape[0]:
        grad = grad + problem.F.T @ lam
        slack = problem.F @ z - problem.g
        complementarity = float(np.abs(lam @ slack))
        violation = float(max(0.0, slack.max()))
    else:
        complementarity = violation = 0.0
    return float(np.abs(grad).max()), complementarity, violation


def solve_lp(c, F, g, maximize=False):
    """
    Solves min (or max) c'z subject to Fz <= g with free variables, using HiGHS. Returns an LpSolution whose status is
    one of optimal, infeasible or unbounded.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    F = np.asarray(F, dtype=float).reshape(-1, c.shape[0])
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if F.shape[0] == 0:
        if np.any(c != 0.0):
            return LpSolution(value=math.inf if maximize else -math.inf, x=None, status=UNBOUNDED)
        return LpSolution(value=0.0, x=np.zeros_like(c), status=OPTIMAL)
    sign = -1.0 if maximize else 1.0
    res = linprog(sign * c, A_ub=F, b_ub=g, bounds=[(None, None)] * c.shape[0], method='highs')
    if res.status == 0:
        return LpSolution(value=float(sign * res.fun), x=np.asarray(res.x, dtype=float), status=OPTIMAL)
    if res.status == 2:
        return LpSolution(value=math.nan, x=None, status=INFEASIBLE)
    if res.status == 3:
        return LpSolution(value=math.inf if maximize else -math.inf, x=None, status=UNBOUNDED)
    raise NumericalError('LP solver failed with status {0}: {1}'.format(res.status, res.message))


class Polytope(object):
    """
    H-representation {z : Fz <= g}. Rows are scaled to unit norm on construction; all-zero rows are dropped when
    trivially satisfied. A box built with `Polytope.box` remembers its half widths so support functions are closed
    form.
    """

    def __init__(self, F, g, half_widths=None):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        g = np.atleast_1d(np.asarray(g, dtype=float))
        if F.shape[0] != g.shape[0]:
            raise ParameterDomainError('polytope rows and bounds differ in length')
        norms = np.linalg.norm(F, axis=1) if F.size else np.zeros(0)
        zero = norms <= ROW_TOLERANCE
        self.empty_by_construction = bool(np.any(g[zero] < -ROW_TOLERANCE))
        keep = ~zero
        self.F = F[keep] / norms[keep, None]
        self.g = g[keep] / norms[keep]
        self.half_widths = None if half_widths is None else np.asarray(half_widths, dtype=float)

    @classmethod
    def box(cls, half_widths):
        hw = np.atleast_1d(np.asarray(half_widths, dtype=float))
        if np.any(hw < 0):
            raise ParameterDomainError('box half widths must be nonnegative')
        n = hw.shape[0]
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hw, hw]), half_widths=hw)

    @classmethod
    def interval(cls, lower, upper, direction):
        """{z : lower <= direction'z <= upper}; infinite bounds contribute no row."""
        direction = np.atleast_1d(np.asarray(direction, dtype=float))
        rows, bounds = [], []
        if math.isfinite(upper):
            rows.append(direction)
            bounds.append(upper)
        if math.isfinite(lower):
            rows.append(-direction)
            bounds.append(-lower)
        if not rows:
            return cls(np.zeros((0, direction.shape[0])), np.zeros(0))
        return cls(np.vstack(rows), np.array(bounds))

    @property
    def dim(self):
        return self.F.shape[1]

    @property
    def n_rows(self):
        return self.F.shape[0]

    def contains(self, z, tol=1e-9):
        if self.empty_by_construction:
            return False
        return bool(np.all(self.F @ np.asarray(z, dtype=float) <= self.g + tol))

    def support(self, direction):
        """sup over the set of direction'z."""
        direction = np.asarray(direction, dtype=float)
        if self.half_widths is not None:
            return float(np.abs(direction) @ self.half_widths)
        res = solve_lp(direction, self.F, self.g, maximize=True)
        if res.status == INFEASIBLE:
            return -math.inf
        return res.value

    def is_empty(self):
        if self.empty_by_construction:
            return True
        if self.n_rows == 0:
            return False
        return solve_lp(np.zeros(self.dim), self.F, self.g).status == INFEASIBLE

    def intersect(self, other):
        if self.empty_by_construction or other.empty_by_construction:
            return _empty(self.dim)
        return Polytope(np.vstack([self.F, other.F]), np.concatenate([self.g, other.g]))

    def is_redundant(self, row, bound, tol=1e-9):
        """True when `row'z <= bound` is implied by this polytope."""
        res = solve_lp(row, self.F, self.g, maximize=True)
        if res.status == UNBOUNDED:
            return False
        if res.status == INFEASIBLE:
            return True
        return res.value <= bound + tol

    def reduce(self, tol=1e-9):
        """Removes rows certified redundant by LP, in index order."""
        if self.empty_by_construction or self.is_empty():
            return self
        keep = list(range(self.n_rows))
        for i in range(self.n_rows):
            others = [j for j in keep if j != i]
            if Polytope(self.F[others].reshape(-1, self.dim), self.g[others]).is_redundant(self.F[i], self.g[i], tol):
                keep = others
        return Polytope(self.F[keep].reshape(-1, self.dim), self.g[keep])

    def __repr__(self):
        return 'Polytope(dim={0}, rows={1})'.format(self.dim, self.n_rows)


def _empty(dim):
    p = Polytope(np.zeros((0, dim)), np.zeros(0))
    p.empty_by_construction = True
    return p


def polytope_robust_pre(P, A_cl, W):
    """
    Robust pre-image {e : A_cl e - w in P for every w in W}, row by row:
    F A_cl e <= g - sup_{w in W} (-F w).
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    if P.empty_by_construction:
        return _empty(A_cl.shape[1])
    tightening = np.array([W.support(-row) for row in P.F]) if P.n_rows else np.zeros(0)
    return Polytope((P.F @ A_cl).reshape(-1, A_cl.shape[1]), P.g - tightening)


def polytope_subset(P, Q, tol=1e-9):
    """True when P is contained in Q, certified row by row with an LP over P."""
    if P.empty_by_construction or P.is_empty():
        return True
    for row, bound in zip(Q.F, Q.g):
        res = solve_lp(row, P.F, P.g, maximize=True)
        if res.status == UNBOUNDED or res.value > bound + tol:
            return False
    return not Q.empty_by_construction


def matrix_exponential(M):
    """exp(M) by scaling and squaring with a Pade approximant."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ParameterDomainError('matrix exponential needs finite entries')
    return scipy.linalg.expm(M)


def dare_residual(A, B, Q, R, P):
    A, B, Q, R, P = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, Q, R, P))
    S = R + B.T @ P @ B
    res = A.T @ P @ A - P - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) + Q
    return float(np.abs(res).max())


def solve_dare(A, B, Q, R):
    """
    Stabilizing solution of the discrete algebraic Riccati equation
    P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q.
    The Schur-method solution is accepted when its relative residual is at most 1e-10, otherwise Riccati fixed-point
    iteration from P = Q takes over. Divergence after 10^4 iterations raises NumericalError.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, Q, R))
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
        P = 0.5 * (P + P.T)
        if np.all(np.isfinite(P)) and dare_residual(A, B, Q, R, P) <= DARE_TOLERANCE * max(1.0, np.abs(P).max()):
            return P
    except (np.linalg.LinAlgError, ValueError) as err:
        log.debug('Schur DARE solver failed (%s), falling back to fixed-point iteration', err)

    P = Q.copy()
    residual = math.inf
    for _ in range(DARE_MAX_ITERATIONS):
        S = R + B.T @ P @ B
        P_next = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        P = P_next
        residual = dare_residual(A, B, Q, R, P)
        if residual <= DARE_TOLERANCE * max(1.0, np.abs(P).max()):
            return P
    raise NumericalError('Riccati iteration did not converge', residual=residual)


def lqr_gain(A, B, R, P):
    """K = (R + B'PB)^-1 B'PA, so that u = -Ke."""
    A, B, R, P = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, R, P))
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def rk4_step(f: Callable, x, t, dt):
    """One classical fourth-order Runge-Kutta step of x' = f(t, x)."""
    if not dt > 0:
        raise ParameterDomainError('dt must be positive, got {0}'.format(dt))
    x = np.asarray(x, dtype=float)
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(k2)) and np.all(np.isfinite(k3))
            and np.all(np.isfinite(k4))):
        raise IntegrationFault('non-finite derivative at t={0:.6f}'.format(t))
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def sample_star(polytope, n, seed=0, center=None, radius_cap=10.0):
    """
    Seeded points of a polytope that is star-shaped about `center` (the origin by default): random directions, radius
    uniform up to the boundary. Unbounded directions are cut at `radius_cap`.
    """
    rng = np.random.default_rng(seed)
    dim = polytope.dim
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    slack = polytope.g - polytope.F @ center
    if np.any(slack < 0):
        raise ParameterDomainError('sampling center lies outside the polytope')
    points = []
    for _ in range(n):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        rates = polytope.F @ direction
        positive = rates > 1e-12
        r_max = float(np.min(slack[positive] / rates[positive])) if np.any(positive) else radius_cap
        points.append(center + rng.uniform(0.0, 1.0) * min(r_max, radius_cap) * direction)
    return np.array(points).reshape(n, dim)
