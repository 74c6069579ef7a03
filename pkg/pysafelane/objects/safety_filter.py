"""
Safety filter layer: overriding control laws for the barrier pair, prescribed-time gain scheduling, input-constrained
margin barriers and the scalar CBF-QP that projects the nominal steering onto the safe interval.

Every constraint is kept in the form a + b w >= 0. For the backstepping designs a is the numerator of the overriding
law and b = L_g L_f h, so the override is u = -a / b: an upper bound on w when b < 0 and a lower bound when b > 0.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ..errors import EstimationError, ParameterDomainError
from ..numerics import QpProblem, solve_qp
from .barriers import LEFT, RIGHT, drift, input_field, lie_terms_at

log = logging.getLogger(__name__)

ESF = 'esf'
PTSF = 'ptsf'
ICCBF = 'iccbf'
PTICCBF = 'pticcbf'
LK_MODES = (ESF, ICCBF)
OA_MODES = (ESF, PTSF, ICCBF, PTICCBF)
PRESCRIBED_TIME_MODES = (PTSF, PTICCBF)
INPUT_CONSTRAINED_MODES = (ICCBF, PTICCBF)

PHASE_PRE = 'pre-detection'
PHASE_OA = 'avoidance'
PHASE_RAMP = 'handoff'
PHASE_LK = 'lane-keeping'

SMOOTH_ABS_EPS = 1e-9
FD_STEP = 1e-6
PASSING_TIME_TOL = 1e-6


@dataclass(frozen=True)
class FilterConfig:
    """
    Filter design for one scenario. Gains are (c1, c2) pairs in 1/s; `oa_initial_gains` are the prescribed-time
    gains at detection. `u_max` is in rad, None meaning unconstrained.
    """
    lk_mode: str = ESF
    oa_mode: str = ESF
    lk_gains: Tuple[float, float] = (15.0, 15.0)
    oa_gains: Tuple[float, float] = (15.0, 15.0)
    oa_initial_gains: Tuple[float, float] = (1.0, 1.0)
    lk_c3: float = 5.0
    oa_c3: float = 5.0
    u_max: Optional[float] = None
    mu_max: float = 1e4
    tau_ramp: float = 1.0
    eps_lg: float = 1e-6
    rho: float = 1e6
    enabled: bool = True

    def __post_init__(self):
        if self.lk_mode not in LK_MODES:
            raise ParameterDomainError('lk_mode must be one of {0}, got {1!r}'.format(LK_MODES, self.lk_mode))
        if self.oa_mode not in OA_MODES:
            raise ParameterDomainError('oa_mode must be one of {0}, got {1!r}'.format(OA_MODES, self.oa_mode))
        gains = tuple(self.lk_gains) + tuple(self.oa_gains) + tuple(self.oa_initial_gains) + (self.lk_c3, self.oa_c3)
        if any(not c > 0 for c in gains):
            raise ParameterDomainError('all filter gains must be positive')
        if not self.mu_max > 1:
            raise ParameterDomainError('mu_max must exceed 1, got {0}'.format(self.mu_max))
        if not self.tau_ramp > 0:
            raise ParameterDomainError('tau_ramp must be positive, got {0}'.format(self.tau_ramp))
        if self.u_max is not None and not self.u_max > 0:
            raise ParameterDomainError('u_max must be positive, got {0}'.format(self.u_max))
        if (self.lk_mode in INPUT_CONSTRAINED_MODES or self.oa_mode in INPUT_CONSTRAINED_MODES) and self.u_max is None:
            raise ParameterDomainError('input-constrained filter modes need u_max')

    @property
    def prescribed_time(self):
        return self.oa_mode in PRESCRIBED_TIME_MODES

    @property
    def input_constrained(self):
        return self.lk_mode in INPUT_CONSTRAINED_MODES or self.oa_mode in INPUT_CONSTRAINED_MODES


@dataclass(frozen=True)
class PrescribedTime:
    """Blow-up window [t_obs, t_obs + T) of the prescribed-time gains."""
    t_obs: float
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterDomainError('prescribed time T must be positive, got {0}'.format(self.T))

    @property
    def t_pass(self):
        return self.t_obs + self.T

    def _ratio(self, t):
        tau = t - self.t_obs
        if tau < 0 or tau >= self.T:
            raise ParameterDomainError('t={0} outside prescribed-time window [{1}, {2})'
                                       .format(t, self.t_obs, self.t_pass))
        return 1.0 - tau / self.T

    def mu2(self, t):
        return self._ratio(t) ** -2

    def mu2_dot(self, t):
        return 2.0 / self.T * self._ratio(t) ** -3

    def mu2_ddot(self, t):
        return 6.0 / self.T ** 2 * self._ratio(t) ** -4


class Gains(NamedTuple):
    c1: float
    c2: float
    c1_dot: float = 0.0
    c2_dot: float = 0.0
    c1_ddot: float = 0.0
    mu: float = 1.0


@dataclass
class FilterConstraint:
    side: str
    a: float
    b: float
    soft: bool = False

    @property
    def override(self):
        return -self.a / self.b


@dataclass
class FilterDecision:
    u_safe: float
    u_override_l: float = math.nan
    u_override_r: float = math.nan
    active_l: bool = False
    active_r: bool = False
    feasible: bool = True
    slack: float = 0.0
    singular: int = 0


def esf_override(ev, side, c1, c2, eps_lg=1e-6):
    """Constant-gain overriding law; None when |L_g L_f h| <= eps_lg."""
    return ptsf_override(ev, side, Gains(c1, c2), eps_lg)


def ptsf_override(ev, side, gains, eps_lg=1e-6):
    """Time-varying-gain overriding law; reduces to the constant-gain law when c1_dot = 0."""
    terms = ev.side(side)
    if abs(terms.LgLf_h) <= eps_lg:
        return None
    return -backstepping_numerator(terms, gains) / terms.LgLf_h


def backstepping_numerator(terms, gains):
    c1, c2 = gains.c1, gains.c2
    return terms.Lf2_h + (c1 + c2) * terms.Lf_h + (gains.c1_dot + c1 * c2) * terms.h


def control_sharing_gap(ev, gains, lane_width):
    """u_l - u_r implied by h_l + h_r = w_l and equal gains on both sides."""
    return -(gains.c1_dot + gains.c1 * gains.c2) * lane_width / ev.LgLf_h_l


def ptsf_gains(pt, c0_1, c0_2, t, mu_max=1e4):
    """c_j(t) = c0_j * min(mu2, mu_max); the derivatives vanish once the cap is reached."""
    mu = pt.mu2(t)
    if mu >= mu_max:
        return Gains(c0_1 * mu_max, c0_2 * mu_max, mu=mu_max)
    mu_dot, mu_ddot = pt.mu2_dot(t), pt.mu2_ddot(t)
    return Gains(c0_1 * mu, c0_2 * mu, c0_1 * mu_dot, c0_2 * mu_dot, c0_1 * mu_ddot, mu)


def input_margin(LgLf_h, u_max):
    """inf over |u| <= u_max of L_g L_f h * u."""
    return -u_max * abs(LgLf_h)


class IccbfTerms(NamedTuple):
    b2: float
    Lf_b2: float
    Lg_b2: float


def _margin_barrier(z, psi_dot_ref, side, model, cfg, gains, u_max):
    terms = lie_terms_at(z, psi_dot_ref, model, cfg).side(side)
    smooth_lg = math.sqrt(terms.LgLf_h * terms.LgLf_h + SMOOTH_ABS_EPS * SMOOTH_ABS_EPS)
    return backstepping_numerator(terms, gains) + input_margin(smooth_lg, u_max), terms


def _directional(fn, z, direction, step=FD_STEP):
    z = np.asarray(z, dtype=float)
    d = np.asarray(direction, dtype=float)
    return (fn(z + step * d) - fn(z - step * d)) / (2.0 * step)


def iccbf_margin_barrier(z, psi_dot_ref, side, model, cfg, gains, u_max):
    """
    Margin barrier b2 = L_f^2 h + (c1 + c2) L_f h + (c1_dot + c1 c2) h - u_max |L_g L_f h| and its Lie derivatives,
    taken by central differences along the drift and input fields. |L_g L_f h| is smoothed to sqrt(x^2 + 1e-18) in
    b2 and in its derivatives alike. For scheduled gains the explicit time dependence of b2 is added to L_f b2
    analytically.
    """
    if not u_max > 0:
        raise ParameterDomainError('u_max must be positive, got {0}'.format(u_max))
    b2, terms = _margin_barrier(z, psi_dot_ref, side, model, cfg, gains, u_max)

    def value(x):
        return _margin_barrier(x, psi_dot_ref, side, model, cfg, gains, u_max)[0]

    Lf_b2 = _directional(value, z, drift(z, psi_dot_ref, model))
    Lg_b2 = _directional(value, z, input_field(model))
    if gains.c1_dot or gains.c2_dot:
        Lf_b2 += (gains.c1_dot + gains.c2_dot) * terms.Lf_h \
            + (gains.c1_ddot + gains.c1_dot * gains.c2 + gains.c1 * gains.c2_dot) * terms.h
    return IccbfTerms(b2, Lf_b2, Lg_b2)


@dataclass
class IccbfReport:
    min_value: float
    witness: Optional[np.ndarray]
    n_samples: int
    n_considered: int
    iterations: int = 1
    values: list = field(default_factory=list, repr=False)

    @property
    def invalidated(self):
        return self.min_value < 0


def iccbf_condition(z, psi_dot_ref, side, model, cfg, gains, c3, u_max, iterations=1):
    """
    Left side of the input-constrained condition L_f b + u_max |L_g b| + c3 b, together with b, after `iterations`
    rounds of the construction. Returns (condition, b).
    """
    if iterations < 1:
        raise ParameterDomainError('iterations must be at least 1, got {0}'.format(iterations))

    # level k differentiates level k-1 with a step 100x wider than the one used inside it
    def level(x, k):
        if k == 0:
            return _margin_barrier(x, psi_dot_ref, side, model, cfg, gains, u_max)[0]
        step = FD_STEP * 100 ** (k - 1)
        inner = lambda y: level(y, k - 1)
        Lf = _directional(inner, x, drift(x, psi_dot_ref, model), step)
        Lg = _directional(inner, x, input_field(model), step)
        return Lf - u_max * abs(Lg) + c3 * inner(x)

    z = np.asarray(z, dtype=float)
    top = iterations - 1
    b = level(z, top)
    step = FD_STEP * 100 ** top
    Lf = _directional(lambda y: level(y, top), z, drift(z, psi_dot_ref, model), step)
    Lg = _directional(lambda y: level(y, top), z, input_field(model), step)
    return Lf + u_max * abs(Lg) + c3 * b, b


def validate_iccbf(samples, side, model, cfg, gains, c3, u_max, iterations=1):
    """
    Minimizes the input-constrained condition over sampled states where h >= 0 and b >= 0. `samples` yields
    (z, psi_dot_ref) pairs with z = (e1, e1_dot, e2, e2_dot, X, Y, psi_r). A negative minimum invalidates the
    candidate at the returned witness state.
    """
    best, witness, considered, total = math.inf, None, 0, 0
    values = []
    for z, psi_dot_ref in samples:
        total += 1
        z = np.asarray(z, dtype=float)
        if lie_terms_at(z, psi_dot_ref, model, cfg).side(side).h < 0:
            continue
        value, b = iccbf_condition(z, psi_dot_ref, side, model, cfg, gains, c3, u_max, iterations)
        if b < 0:
            continue
        considered += 1
        values.append(value)
        if value < best:
            best, witness = value, z.copy()
    report = IccbfReport(min_value=best, witness=witness, n_samples=total, n_considered=considered,
                         iterations=iterations, values=values)
    log.info('ICCBF check on side %s: %d of %d samples admissible, min condition %.6g',
             side, considered, total, best)
    return report


def sample_states(road, obstacle, lane_width, e_v, n, seed=0):
    """Seeded states around the obstacle, spread across the expanded lane; yields (z, psi_dot_ref)."""
    rng = np.random.default_rng(seed)
    s_lo = max(0.0, obstacle.s_obs - obstacle.delta_2)
    s_hi = min(road.length, obstacle.s_obs + obstacle.r_obs)
    half = 0.5 * lane_width + e_v
    for _ in range(n):
        s = rng.uniform(s_lo, s_hi)
        e1 = rng.uniform(-half, half)
        e1_dot = rng.uniform(-1.0, 1.0)
        e2 = rng.uniform(-0.1, 0.1)
        e2_dot = rng.uniform(-0.3, 0.3)
        X, Y = road.position(s)
        nx, ny = road.left_normal(s)
        yield np.array([e1, e1_dot, e2, e2_dot, X + e1 * nx, Y + e1 * ny, road.heading(s)]), 0.0


def estimate_passing_time(road, s_now, v_l, s_obs_end=None, d_obs_path=None):
    """
    Smallest T > 0 whose chord along the reference path from s_now matches the path distance to the point abreast
    of the obstacle's far edge, by bisection to 1e-6 s. Either `s_obs_end` (the path distance is then
    s_obs_end - s_now) or `d_obs_path` is given. On a curve the chord is shorter than the arc, so T exceeds the
    path distance over v_l.
    """
    if d_obs_path is None:
        if s_obs_end is None or not s_obs_end > s_now:
            raise ParameterDomainError('obstacle end must lie ahead of the vehicle')
        d_obs_path = s_obs_end - s_now
    if not d_obs_path > 0:
        raise ParameterDomainError('path distance must be positive, got {0}'.format(d_obs_path))
    x0, y0 = road.position(s_now)

    def chord(T):
        x, y = road.position(min(s_now + v_l * T, road.length))
        return math.hypot(x - x0, y - y0)

    lo, hi = 0.0, 10.0 * d_obs_path / v_l
    if chord(hi) < d_obs_path:
        raise EstimationError('passing-time root not bracketed in [0, {0:.3f}] s'.format(hi))
    while hi - lo > PASSING_TIME_TOL:
        mid = 0.5 * (lo + hi)
        if chord(mid) < d_obs_path:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def assemble_and_solve_filter_qp(u_nominal, constraints, u_max=None, eps_lg=1e-6, rho=1e6):
    """
    u_safe = argmin |w - u_nominal|^2 subject to a_i + b_i w >= 0 and, when u_max is given, |w| <= u_max. Constraints
    with |b| <= eps_lg are dropped and counted as singular. If the hard problem is empty, the soft constraints get a
    shared slack (rad) penalized by rho and the feasibility flag is cleared; as a last resort the soft-constrained
    solution is clipped to the input bounds.
    """
    decision = FilterDecision(u_safe=u_nominal)
    kept = []
    for c in constraints:
        if abs(c.b) <= eps_lg:
            decision.singular += 1
            continue
        kept.append(c)
        if c.side == LEFT:
            decision.u_override_l = c.override
        elif c.side == RIGHT:
            decision.u_override_r = c.override

    if all(c.a + c.b * u_nominal >= 0 for c in kept) and (u_max is None or abs(u_nominal) <= u_max):
        return decision

    rows = [[-c.b] for c in kept]
    bounds = [c.a for c in kept]
    if u_max is not None:
        rows += [[1.0], [-1.0]]
        bounds += [u_max, u_max]
    sol = solve_qp(QpProblem(H=[[2.0]], q=[-2.0 * u_nominal], F=rows, g=bounds))
    if sol.optimal:
        decision.u_safe = float(sol.z[0])
        _flag_active(decision, kept, sol.active)
        return decision

    decision.feasible = False
    for bounded in ((u_max,) if u_max is not None else ()) + (None,):
        z, slack = _solve_softened(u_nominal, kept, bounded, rho)
        if z is not None:
            if u_max is not None:
                z = min(max(z, -u_max), u_max)
            decision.u_safe, decision.slack = z, slack
            break
    else:
        decision.u_safe = u_nominal if u_max is None else min(max(u_nominal, -u_max), u_max)
    log.warning('filter QP infeasible at u_nominal=%.6g; soft constraints relaxed by %.6g rad',
                u_nominal, decision.slack)
    return decision


def _solve_softened(u_nominal, constraints, u_max, rho):
    rows, bounds = [], []
    for c in constraints:
        scale = abs(c.b)
        rows.append([-c.b / scale, -1.0 if c.soft else 0.0])
        bounds.append(c.a / scale)
    rows.append([0.0, -1.0])
    bounds.append(0.0)
    if u_max is not None:
        rows += [[1.0, 0.0], [-1.0, 0.0]]
        bounds += [u_max, u_max]
    sol = solve_qp(QpProblem(H=np.diag([2.0, 2.0 * rho]), q=[-2.0 * u_nominal, 0.0], F=rows, g=bounds))
    if not sol.optimal:
        return None, 0.0
    return float(sol.z[0]), float(max(sol.z[1], 0.0))


def _flag_active(decision, constraints, active):
    for i in active:
        if i >= len(constraints):
            continue
        if constraints[i].side == LEFT:
            decision.active_l = True
        elif constraints[i].side == RIGHT:
            decision.active_r = True


def _bump(x):
    return math.exp(-1.0 / x) if x > 0 else 0.0


def handoff_weight(x):
    """Smooth step from 0 at x <= 0 to 1 at x >= 1 with all derivatives vanishing at both ends."""
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    a, b = _bump(x), _bump(1.0 - x)
    return a / (a + b)


def post_passing_handoff(t, pt, tau_ramp, u_filtered, u_lk):
    """
    Cedes authority from the avoidance filter to lane keeping after the passing time. `u_filtered` is the avoidance
    output (held at its passing-time value once the window closes) and `u_lk` the lane-keeping filtered command.
    """
    if t < pt.t_pass:
        return u_filtered
    sigma = handoff_weight((t - pt.t_pass) / tau_ramp)
    return sigma * u_lk + (1.0 - sigma) * u_filtered


class FilterStep(NamedTuple):
    decision: FilterDecision
    u_applied: float
    h_l: float
    h_r: float
    phi: float
    d: float
    mu2: float
    detected: bool
    phase: str


class SafetyFilter(object):
    """
    Stateful filter for one simulation run: latches detection, estimates the passing time, schedules the
    prescribed-time gains and hands authority back to lane keeping after the obstacle is passed.
    """

    def __init__(self, client):
        self.client = client
        self.config = client.filter_config
        self.model = client.vehicle.model()
        self.barrier_config = client.barriers.config()
        self.lane_config = self.barrier_config.lane_only()
        self.latch = client.road_world.latch()
        self.pt = None
        self.singularities = 0
        self._held = None

    @property
    def t_obs(self):
        return self.latch.t_obs if self.latch is not None else None

    def _gains(self, side, t, phase):
        cfg = self.config
        if side == LEFT:
            return Gains(*cfg.lk_gains), cfg.lk_mode, cfg.lk_c3
        if not cfg.prescribed_time:
            return Gains(*cfg.oa_gains), cfg.oa_mode, cfg.oa_c3
        base = ICCBF if cfg.oa_mode == PTICCBF else ESF
        if phase == PHASE_OA:
            gains = ptsf_gains(self.pt, cfg.oa_initial_gains[0], cfg.oa_initial_gains[1], t, cfg.mu_max)
            return gains, base, cfg.oa_c3 * gains.mu
        if phase == PHASE_PRE:
            return Gains(*cfg.oa_initial_gains), base, cfg.oa_c3
        return Gains(*cfg.lk_gains), cfg.lk_mode, cfg.lk_c3

    def constraint(self, side, z, psi_dot_ref, bcfg, ev, gains, mode, c3):
        if mode in INPUT_CONSTRAINED_MODES:
            terms = iccbf_margin_barrier(z, psi_dot_ref, side, self.model, bcfg, gains, self.config.u_max)
            return FilterConstraint(side, terms.Lf_b2 + c3 * terms.b2, terms.Lg_b2, soft=side == LEFT)
        sterms = ev.side(side)
        return FilterConstraint(side, backstepping_numerator(sterms, gains), sterms.LgLf_h, soft=side == LEFT)

    def _phase(self, t):
        if self.latch is None or not self.latch.detected:
            return PHASE_PRE
        if self.pt is None or t < self.pt.t_pass:
            return PHASE_OA
        if t < self.pt.t_pass + self.config.tau_ramp:
            return PHASE_RAMP
        return PHASE_LK

    def _on_detection(self, t, z, s, ev):
        road = self.client.road_profile
        obstacle = self.barrier_config.obstacle
        v_l = self.model.v_l
        if self.config.prescribed_time:
            s_now = road.project(z[4], z[5], s)
            T = estimate_passing_time(road, s_now, v_l, s_obs_end=obstacle.s_obs + obstacle.r_obs)
            self.pt = PrescribedTime(t_obs=t, T=T)
            log.info('passing time estimated at t=%.4f s (T=%.4f s)', self.pt.t_pass, T)
        self.check_gain_admissibility(ev)

    def check_gain_admissibility(self, ev):
        """Warns when c_1 does not dominate -L_f h / h at detection; returns the offending sides."""
        bad = []
        c1_l = self.config.lk_gains[0]
        c1_r = self.config.oa_initial_gains[0] if self.config.prescribed_time else self.config.oa_gains[0]
        for side, c1 in ((LEFT, c1_l), (RIGHT, c1_r)):
            terms = ev.side(side)
            if terms.h <= 0:
                bad.append(side)
                log.warning('barrier h_%s=%.6g is not positive at detection', side, terms.h)
                continue
            bound = max(0.0, -terms.Lf_h / terms.h)
            if not c1 > bound:
                bad.append(side)
                log.warning('gain c_%s,1=%.6g does not exceed %.6g at detection', side, c1, bound)
        return bad

    def _solve(self, t, z, psi_dot_ref, u_nominal, bcfg, ev, phase):
        constraints, gains_used = [], {}
        for side in (LEFT, RIGHT):
            gains, mode, c3 = self._gains(side, t, phase)
            gains_used[side] = (gains, mode)
            constraints.append(self.constraint(side, z, psi_dot_ref, bcfg, ev, gains, mode, c3))
        u_max = self.config.u_max if self.config.input_constrained else None
        decision = assemble_and_solve_filter_qp(u_nominal, constraints, u_max, self.config.eps_lg, self.config.rho)
        if decision.singular:
            self.singularities += decision.singular
            log.warning('L_g L_f h singular at t=%.4f, state=%s', t, np.array2string(np.asarray(z), precision=6))
        self._check_sharing(ev, bcfg, gains_used, decision)
        return decision

    def _check_sharing(self, ev, bcfg, gains_used, decision):
        (g_l, m_l), (g_r, m_r) = gains_used[LEFT], gains_used[RIGHT]
        if bcfg.obstacle is None or m_l != m_r or m_l in INPUT_CONSTRAINED_MODES or g_l != g_r:
            return
        if abs(bcfg.e_v - bcfg.obstacle_gain) > 1e-12:
            return
        if math.isnan(decision.u_override_l) or math.isnan(decision.u_override_r):
            return
        expected = control_sharing_gap(ev, g_l, bcfg.lane_width)
        actual = decision.u_override_l - decision.u_override_r
        if abs(actual - expected) > 1e-8 * max(1.0, abs(expected)):
            log.warning('control-sharing gap %.9g differs from %.9g', actual, expected)

    def step(self, t, z, psi_dot_ref, u_nominal, s):
        """
        Filters the nominal steering at time t. `z` stacks the error state, the vehicle position and the road
        heading; `s` is the arc length.
        """
        if not self.config.enabled:
            ev = lie_terms_at(z, psi_dot_ref, self.model, self.barrier_config)
            if self.latch is not None:
                self.latch.update(t, ev.d)
            return FilterStep(FilterDecision(u_safe=u_nominal), u_nominal, ev.h_l, ev.h_r, ev.phi, ev.d, 1.0,
                              bool(self.latch and self.latch.detected), PHASE_PRE)

        ev = lie_terms_at(z, psi_dot_ref, self.model, self.barrier_config)
        if self.latch is not None and not self.latch.detected and self.latch.update(t, ev.d):
            self._on_detection(t, z, s, ev)
        phase = self._phase(t)
        detected = bool(self.latch is not None and self.latch.detected)

        if phase in (PHASE_PRE, PHASE_OA):
            decision = self._solve(t, z, psi_dot_ref, u_nominal, self.barrier_config, ev, phase)
            mu2 = self.pt.mu2(t) if (phase == PHASE_OA and self.pt is not None) else 1.0
            mu2 = min(mu2, self.config.mu_max)
            self._held = decision.u_safe
            return FilterStep(decision, decision.u_safe, ev.h_l, ev.h_r, ev.phi, ev.d, mu2, detected, phase)

        lane_ev = lie_terms_at(z, psi_dot_ref, self.model, self.lane_config)
        decision = self._solve(t, z, psi_dot_ref, u_nominal, self.lane_config, lane_ev, phase)
        u_applied = post_passing_handoff(t, self.pt, self.config.tau_ramp, self._held, decision.u_safe)
        # no gain schedule once the window has closed
        return FilterStep(decision, u_applied, lane_ev.h_l, lane_ev.h_r, ev.phi, ev.d, math.nan, detected, phase)
