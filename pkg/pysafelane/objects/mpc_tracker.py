"""
Tracking MPC for lane keeping. The controller steers the deviation e_x = x - x_s from the yaw-rate dependent steady
state; the applied steering is u = u_s + v_0. Terminal ingredients come from the discrete Riccati equation, and the
terminal set is the maximal robust invariant set of the LQR loop under admissible inputs.
"""
import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from ..errors import NumericalError, ParameterDomainError
from ..numerics import (Polytope, QpProblem, lqr_gain, polytope_robust_pre, sample_star, solve_dare,
                        solve_qp)

log = logging.getLogger(__name__)

SCALED_COST = 'scaled-cost'
HARD_SET = 'hard-set'
TERMINAL_MODES = (SCALED_COST, HARD_SET)
MICA_MAX_ITERATIONS = 200


@dataclass(frozen=True)
class MpcConfig:
    """
    Horizon, weights and constraint bounds of the tracking MPC. u_max in rad (None drops the input constraints),
    c_psi and c_dpsi in rad/s bound the reference yaw rate and its one-sample change. P and K are filled in from the
    Riccati solution when left empty.
    """
    N: int = 30
    Q: tuple = (10.0, 1.0, 10.0, 1.0)
    R: float = 50.0
    beta: float = 50.0
    T_s: float = 0.05
    u_max: Optional[float] = math.radians(5.0)
    c_psi: float = 0.02
    c_dpsi: float = 2e-4
    terminal_mode: str = SCALED_COST
    P: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ParameterDomainError('horizon N must be a positive integer, got {0}'.format(self.N))
        if not self.R > 0:
            raise ParameterDomainError('R must be positive, got {0}'.format(self.R))
        if not self.beta >= 1:
            raise ParameterDomainError('terminal scale beta must be at least 1, got {0}'.format(self.beta))
        if not self.T_s > 0:
            raise ParameterDomainError('T_s must be positive, got {0}'.format(self.T_s))
        if self.u_max is not None and not self.u_max > 0:
            raise ParameterDomainError('u_max must be positive, got {0}'.format(self.u_max))
        if not (self.c_psi > 0 and self.c_dpsi > 0):
            raise ParameterDomainError('c_psi and c_dpsi must be positive')
        if self.terminal_mode not in TERMINAL_MODES:
            raise ParameterDomainError('terminal_mode must be one of {0}'.format(TERMINAL_MODES))
        if np.any(np.linalg.eigvalsh(self.Q_matrix) <= 0):
            raise ParameterDomainError('Q must be positive definite')

    @property
    def Q_matrix(self):
        Q = np.asarray(self.Q, dtype=float)
        return np.diag(Q) if Q.ndim == 1 else Q


class MpcResult(NamedTuple):
    v: float
    u: float
    u_s: float
    trajectory: np.ndarray
    moves: np.ndarray
    feasible: bool
    cost: float


def steady_state_disturbance_w(model_d, psi_dot_ref_k, psi_dot_ref_next):
    """w = dpsi * (A_d x_bar + B_d u_bar + G_d) with dpsi the one-sample change of the reference yaw rate."""
    return (psi_dot_ref_next - psi_dot_ref_k) * model_d.steady_state_offset()


def disturbance_set(model_d, c_dpsi):
    """Box of one-sample steady-state deflections: |w_j| <= c_dpsi |b_j|."""
    return Polytope.box(c_dpsi * np.abs(model_d.steady_state_offset()))


def admissible_input_set(u_bar, u_max, c_psi):
    """Corrections v admissible for every admissible reference: |v| <= u_max - c_psi |u_bar|."""
    if u_max is None:
        return Polytope.interval(-math.inf, math.inf, [1.0])
    bound = u_max - c_psi * abs(u_bar)
    return Polytope.interval(-bound, bound, [1.0])


def _column(B):
    return np.asarray(B, dtype=float).reshape(-1, 1)


def terminal_ingredients(model_d, Q, R):
    """Riccati terminal weight P and LQR gain K (1 x n) with A_d - B_d K Schur stable."""
    A, B = model_d.A_d, _column(model_d.B_d)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = solve_dare(A, B, Q, R)
    K = lqr_gain(A, B, R, P)
    radius = spectral_radius(A - B @ K)
    if not radius < 1:
        raise NumericalError('LQR closed loop is not Schur stable (spectral radius {0:.6g})'.format(radius),
                             residual=radius)
    return P, K


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def mica_terminal_set(model_d, K, V_bar, W, k_max=MICA_MAX_ITERATIONS):
    """
    Maximal robust invariant set of e+ = (A_d - B_d K) e - w, w in W, inside {e : K e in V_bar}. Only the rows added
    in the last round are propagated; the iteration stops once every new row is redundant. The returned polytope
    carries `converged`, `iterations` and `empty` attributes.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A_cl = model_d.A_d - _column(model_d.B_d) @ K
    if not spectral_radius(A_cl) < 1:
        raise ParameterDomainError('closed loop A_d - B_d K must be Schur stable')
    if V_bar.is_empty():
        raise ParameterDomainError('admissible input set is empty')

    omega = Polytope(V_bar.F @ K, V_bar.g)
    frontier = omega
    converged = False
    k = 0
    for k in range(1, k_max + 1):
        pre = polytope_robust_pre(frontier, A_cl, W)
        if pre.empty_by_construction:
            omega = pre
            converged = True
            break
        rows, bounds = [], []
        for row, bound in zip(pre.F, pre.g):
            if not omega.is_redundant(row, bound):
                rows.append(row)
                bounds.append(bound)
        log.debug('MICA iteration %d: %d of %d new rows kept', k, len(rows), pre.n_rows)
        if not rows:
            converged = True
            break
        frontier = Polytope(np.array(rows), np.array(bounds))
        omega = omega.intersect(frontier)
        if omega.is_empty():
            converged = True
            break

    empty = omega.is_empty()
    E = omega if empty else omega.reduce()
    E.converged = converged
    E.iterations = k
    E.empty = empty
    if not converged:
        log.warning('MICA iteration stopped after %d rounds without convergence', k)
    if empty:
        log.warning('MICA terminal set is empty for this disturbance bound')
    return E


def condense(model_d, N):
    """
    Prediction matrices of e_i = Phi_i e_0 + Gamma_i v - Lambda_i w for i = 1..N, stacked row blocks of size n.
    """
    A, B = model_d.A_d, np.asarray(model_d.B_d, dtype=float).reshape(-1)
    n = A.shape[0]
    Phi = np.zeros((N * n, n))
    Gamma = np.zeros((N * n, N))
    Lam = np.zeros((N * n, n))
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    for i in range(1, N + 1):
        rows = slice((i - 1) * n, i * n)
        Phi[rows] = powers[i]
        Lam[rows] = sum(powers[:i])
        for j in range(i):
            Gamma[rows, j] = powers[i - 1 - j] @ B
    return Phi, Gamma, Lam


def _weights(cfg, n, P):
    N = cfg.N
    Q = cfg.Q_matrix
    Qbar = np.zeros((N * n, N * n))
    for i in range(N - 1):
        Qbar[i * n:(i + 1) * n, i * n:(i + 1) * n] = Q
    Qbar[(N - 1) * n:, (N - 1) * n:] = cfg.beta * np.atleast_2d(P)
    return Q, Qbar


class MpcProblem(NamedTuple):
    qp: QpProblem
    c: np.ndarray
    Gamma: np.ndarray
    u_s: np.ndarray
    constant: float


def mpc_problem(e_x, preview, model_d, cfg, E=None):
    """
    Condensed QP in the moves v around the steady-state input. `preview` holds the reference yaw rate at t_k,
    t_k+1, ...; at least N values. The steady-state deflection w is frozen over the horizon.
    """
    e_x = np.atleast_1d(np.asarray(e_x, dtype=float))
    preview = np.atleast_1d(np.asarray(preview, dtype=float))
    N, n = cfg.N, e_x.shape[0]
    if preview.shape[0] < N:
        raise ParameterDomainError('preview needs at least N={0} values, got {1}'.format(N, preview.shape[0]))
    P = cfg.P
    if P is None:
        P, _ = terminal_ingredients(model_d, cfg.Q_matrix, cfg.R)

    w = steady_state_disturbance_w(model_d, preview[0], preview[1]) if preview.shape[0] > 1 else np.zeros(n)
    Phi, Gamma, Lam = condense(model_d, N)
    Q, Qbar = _weights(cfg, n, P)
    c = Phi @ e_x - Lam @ w
    H = 2.0 * (Gamma.T @ Qbar @ Gamma + cfg.R * np.eye(N))
    H = 0.5 * (H + H.T)
    q = 2.0 * Gamma.T @ Qbar @ c
    constant = float(c @ Qbar @ c + e_x @ Q @ e_x)

    u_s = preview[:N] * model_d.u_bar
    rows, bounds = [], []
    if cfg.u_max is not None:
        rows.append(np.eye(N))
        bounds.append(cfg.u_max - u_s)
        rows.append(-np.eye(N))
        bounds.append(cfg.u_max + u_s)
    if cfg.terminal_mode == HARD_SET and E is not None and E.n_rows:
        last = slice((N - 1) * n, N * n)
        rows.append(E.F @ Gamma[last])
        bounds.append(E.g - E.F @ c[last])
    F = np.vstack(rows) if rows else None
    g = np.concatenate(bounds) if bounds else None
    return MpcProblem(QpProblem(H=H, q=q, F=F, g=g), c, Gamma, u_s, constant)


def solve_mpc_step(e_x, preview, model_d, cfg, E=None, previous=None):
    """
    One receding-horizon step of `mpc_problem`. With `previous` (the last optimal move sequence) an infeasible
    problem falls back to its shifted tail.
    """
    e_x = np.atleast_1d(np.asarray(e_x, dtype=float))
    N, n = cfg.N, e_x.shape[0]
    problem = mpc_problem(e_x, preview, model_d, cfg, E)
    H, q = problem.qp.H, problem.qp.q
    c, Gamma, u_s, constant = problem.c, problem.Gamma, problem.u_s, problem.constant

    sol = solve_qp(problem.qp)
    if sol.optimal:
        moves, feasible = sol.z, True
        cost = sol.objective + constant
    else:
        feasible = False
        if previous is not None and len(previous) == N:
            moves = np.concatenate([np.asarray(previous[1:], dtype=float), [0.0]])
        else:
            moves = np.zeros(N)
        cost = float(0.5 * moves @ H @ moves + q @ moves + constant)
        log.warning('MPC problem infeasible; applying the shifted previous solution')

    trajectory = np.vstack([e_x, (c + Gamma @ moves).reshape(N, n)])
    return MpcResult(v=float(moves[0]), u=float(u_s[0] + moves[0]), u_s=float(u_s[0]), trajectory=trajectory,
                     moves=moves, feasible=feasible, cost=cost)


class MpcTracker(object):
    """
    Lane-keeping MPC of one scenario. Holds the terminal ingredients, the disturbance and input sets and the last
    optimal move sequence used as fallback.
    """

    def __init__(self, client):
        self.client = client
        self._config = None
        self._terminal_set = None
        self.previous = None
        self.infeasible_steps = 0

    @property
    def model_d(self):
        return self.client.vehicle.discretize(self.client.mpc_config.T_s)

    def config(self):
        if self._config is None:
            cfg = self.client.mpc_config
            P, K = terminal_ingredients(self.model_d, cfg.Q_matrix, cfg.R)
            self._config = replace(cfg, P=P, K=K)
        return self._config

    def disturbance_set(self):
        return disturbance_set(self.model_d, self.config().c_dpsi)

    def admissible_input_set(self):
        cfg = self.config()
        return admissible_input_set(self.model_d.u_bar, cfg.u_max, cfg.c_psi)

    def terminal_set(self):
        if self._terminal_set is None:
            self._terminal_set = mica_terminal_set(self.model_d, self.config().K, self.admissible_input_set(),
                                                   self.disturbance_set())
        return self._terminal_set

    def reset(self):
        self.previous = None
        self.infeasible_steps = 0

    def step(self, e_x, preview):
        cfg = self.config()
        E = self.terminal_set() if cfg.terminal_mode == HARD_SET else None
        result = solve_mpc_step(e_x, preview, self.model_d, cfg, E, self.previous)
        if not result.feasible:
            self.infeasible_steps += 1
        self.previous = result.moves
        return result

    def audit(self, invariance_samples=200, seed=0):
        """Input-set, terminal-set and invariance checks; returns a list of problems."""
        cfg = self.config()
        problems = []
        u_bar = self.model_d.u_bar
        if cfg.u_max is not None and not cfg.c_psi < cfg.u_max / abs(u_bar):
            problems.append('c_psi {0:.6g} must be below u_max/u_bar = {1:.6g}'.format(cfg.c_psi,
                                                                                        cfg.u_max / abs(u_bar)))
            return problems
        if cfg.u_max is None or cfg.terminal_mode != HARD_SET:
            return problems
        E = self.terminal_set()
        if E.empty:
            problems.append('terminal set is empty for c_dpsi={0:.6g}'.format(cfg.c_dpsi))
            return problems
        if not E.converged:
            problems.append('terminal set iteration did not converge')
        violations = invariance_violations(E, self.model_d, cfg.K, self.admissible_input_set(),
                                           self.disturbance_set(), invariance_samples, seed)
        if violations:
            problems.append('terminal set invariance violated at {0} sampled points'.format(violations))
        return problems


def invariance_violations(E, model_d, K, V_bar, W, n_samples=1000, seed=0, tol=1e-7):
    """Counts sampled (e, w-vertex) pairs leaving E under the LQR loop, or with K e outside V_bar."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A_cl = model_d.A_d - _column(model_d.B_d) @ K
    hw = W.half_widths if W.half_widths is not None else np.zeros(A_cl.shape[0])
    vertices = [np.array(signs) * hw for signs in itertools.product((-1.0, 1.0), repeat=hw.shape[0])]
    count = 0
    for e in sample_star(E, n_samples, seed):
        if not V_bar.contains(K @ e, tol):
            count += 1
            continue
        nxt = A_cl @ e
        count += sum(1 for w in vertices if not E.contains(nxt - w, tol))
    return count
