"""
Lane-keeping and obstacle-avoidance barrier pair.

    h_l = w/2 - e1 cos(e2) + e_v Phi(d)
    h_r = w/2 + e1 cos(e2) - (w/2 + e_obs_l) Phi(d)

Lie derivatives are taken along the lateral error dynamics together with the global kinematics of the vehicle, with
the road heading advancing at the reference yaw rate. The input enters through the second derivative only.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

from ..errors import ConventionError, ParameterDomainError
from .road_world import Obstacle, pose_rates

log = logging.getLogger(__name__)

LEFT = 'l'
RIGHT = 'r'
SIDES = (LEFT, RIGHT)


@dataclass(frozen=True)
class BarrierConfig:
    lane_width: float = 3.7
    e_v: float = 0.0
    obstacle: Optional[Obstacle] = None

    def __post_init__(self):
        if not self.lane_width > 0:
            raise ParameterDomainError('lane width must be positive, got {0}'.format(self.lane_width))
        if self.e_v < 0:
            raise ParameterDomainError('lane expansion e_v must be nonnegative, got {0}'.format(self.e_v))

    @property
    def delta_2(self):
        return self.obstacle.delta_2 if self.obstacle is not None else math.inf

    @property
    def obstacle_gain(self):
        """Coefficient a of Phi in h_r."""
        if self.obstacle is None:
            return 0.0
        return 0.5 * self.lane_width + self.obstacle.e_obs_l

    def lane_only(self):
        return replace(self, obstacle=None, e_v=0.0)


class SideTerms(NamedTuple):
    h: float
    Lf_h: float
    Lf2_h: float
    LgLf_h: float


@dataclass(frozen=True)
class BarrierEval:
    h_l: float
    h_r: float
    Lf_h_l: float
    Lf_h_r: float
    Lf2_h_l: float
    Lf2_h_r: float
    LgLf_h_l: float
    LgLf_h_r: float
    phi: float
    dphi: float
    d: float

    def side(self, i):
        if i == LEFT:
            return SideTerms(self.h_l, self.Lf_h_l, self.Lf2_h_l, self.LgLf_h_l)
        if i == RIGHT:
            return SideTerms(self.h_r, self.Lf_h_r, self.Lf2_h_r, self.LgLf_h_r)
        raise ParameterDomainError('side must be {0!r} or {1!r}, got {2!r}'.format(LEFT, RIGHT, i))


def smooth_step(d, delta_2):
    """Returns (Phi, dPhi/dd): 0 beyond delta_2^2, 1 inside the obstacle, exp(1 - delta^2/(delta^2 - d)) between."""
    if not delta_2 > 0:
        raise ParameterDomainError('delta_2 must be positive, got {0}'.format(delta_2))
    phi, dphi, _ = _smooth_step2(d, delta_2 * delta_2)
    return phi, dphi


def smooth_step_second_derivative(d, delta_2):
    return _smooth_step2(d, delta_2 * delta_2)[2]


def _smooth_step2(d, dd):
    if d >= dd or math.isinf(dd):
        return 0.0, 0.0, 0.0
    if d <= 0.0:
        return 1.0, 0.0, 0.0
    gap = dd - d
    phi = math.exp(1.0 - dd / gap)
    k = dd / (gap * gap)
    return phi, -phi * k, phi * (k * k - 2.0 * dd / (gap * gap * gap))


def lane_expansion_for_sharing(w_l, e_obs_l, allow_blocking=False):
    """
    Left-lane expansion that makes h_l + h_r identically equal to the lane width. Blocking obstacles (inner edge at
    or beyond the centerline) are only accepted with `allow_blocking`.
    """
    if e_obs_l >= 0 and not allow_blocking:
        raise ConventionError('obstacle must stay right of the centerline (e_obs_l={0})'.format(e_obs_l))
    e_v = 0.5 * w_l + e_obs_l
    if e_v <= 0:
        raise ConventionError('lane expansion must be strictly positive, got {0}'.format(e_v))
    return e_v


def _terms(e1, e1_dot, e2, e2_dot, X, Y, psi_r, psi_dot_ref, model, cfg):
    A, B, G, v = model.A, model.B, model.G, model.v_l
    a1, a3 = A[1], A[3]
    e1_ddot = a1[0] * e1 + a1[1] * e1_dot + a1[2] * e2 + a1[3] * e2_dot + G[1] * psi_dot_ref
    e2_ddot = a3[0] * e1 + a3[1] * e1_dot + a3[2] * e2 + a3[3] * e2_dot + G[3] * psi_dot_ref
    b2, b4 = B[1], B[3]

    c2, s2 = math.cos(e2), math.sin(e2)
    p = e1 * c2
    p_dot = e1_dot * c2 - e1 * s2 * e2_dot
    p_ddot = e1_ddot * c2 - 2.0 * e1_dot * s2 * e2_dot - e1 * c2 * e2_dot * e2_dot - e1 * s2 * e2_ddot
    p_u = b2 * c2 - e1 * s2 * b4

    half = 0.5 * cfg.lane_width
    if cfg.obstacle is None:
        phi = dphi = ddphi = 0.0
        d = math.inf
        d_dot = d_ddot = d_u = 0.0
    else:
        obs = cfg.obstacle
        dx, dy = X - obs.X_obs, Y - obs.Y_obs
        d = dx * dx + dy * dy - obs.r_obs ** 2
        theta = e2 + psi_r
        ct, st = math.cos(theta), math.sin(theta)
        q = e1_dot - v * e2
        theta_dot = e2_dot + psi_dot_ref
        q_dot = e1_ddot - v * e2_dot
        X_dot = v * ct - q * st
        Y_dot = v * st + q * ct
        X_ddot = -v * st * theta_dot - q_dot * st - q * ct * theta_dot
        Y_ddot = v * ct * theta_dot + q_dot * ct - q * st * theta_dot
        d_dot = 2.0 * (dx * X_dot + dy * Y_dot)
        d_ddot = 2.0 * (X_dot * X_dot + Y_dot * Y_dot + dx * X_ddot + dy * Y_ddot)
        d_u = 2.0 * b2 * (-dx * st + dy * ct)
        phi, dphi, ddphi = _smooth_step2(d, obs.delta_2 ** 2)

    def side(sigma, kappa):
        h = half + sigma * p + kappa * phi
        Lf_h = sigma * p_dot + kappa * dphi * d_dot
        Lf2_h = sigma * p_ddot + kappa * (ddphi * d_dot * d_dot + dphi * d_ddot)
        LgLf_h = sigma * p_u + kappa * dphi * d_u
        return h, Lf_h, Lf2_h, LgLf_h

    left = side(-1.0, cfg.e_v)
    right = side(1.0, -cfg.obstacle_gain)
    return BarrierEval(h_l=left[0], h_r=right[0], Lf_h_l=left[1], Lf_h_r=right[1], Lf2_h_l=left[2],
                       Lf2_h_r=right[2], LgLf_h_l=left[3], LgLf_h_r=right[3], phi=phi, dphi=dphi, d=d)


def barrier_values(state, pose, cfg):
    """(h_l, h_r) at the given error state and vehicle pose."""
    e1, e2 = state[0], state[2]
    p = e1 * math.cos(e2)
    half = 0.5 * cfg.lane_width
    phi = 0.0
    if cfg.obstacle is not None:
        obs = cfg.obstacle
        d = (pose.X - obs.X_obs) ** 2 + (pose.Y - obs.Y_obs) ** 2 - obs.r_obs ** 2
        phi = _smooth_step2(d, obs.delta_2 ** 2)[0]
    return half - p + cfg.e_v * phi, half + p - cfg.obstacle_gain * phi


def barrier_lie_terms(state, pose, model, cfg, psi_dot_ref=0.0):
    """Values and Lie derivatives of both barriers; L_f terms are taken with zero steering."""
    return _terms(state[0], state[1], state[2], state[3], pose.X, pose.Y, pose.psi_r, psi_dot_ref, model, cfg)


def lie_terms_at(z, psi_dot_ref, model, cfg):
    """Same as barrier_lie_terms on the stacked state z = (e1, e1_dot, e2, e2_dot, X, Y, psi_r)."""
    return _terms(z[0], z[1], z[2], z[3], z[4], z[5], z[6], psi_dot_ref, model, cfg)


def drift(z, psi_dot_ref, model):
    """Zero-input vector field on the stacked state z."""
    x = z[:4]
    e_dot = model.A @ x + model.G * psi_dot_ref
    X_dot, Y_dot = pose_rates(z[1], z[2], z[6], model.v_l)
    return [e_dot[0], e_dot[1], e_dot[2], e_dot[3], X_dot, Y_dot, psi_dot_ref]


def input_field(model):
    """Input direction on the stacked state z."""
    return [0.0, model.B[1], 0.0, model.B[3], 0.0, 0.0, 0.0]


class Barriers(object):
    """
    Barrier configuration of a scenario. The left lane expansion follows the control-sharing rule whenever an
    obstacle is present.
    """

    def __init__(self, client):
        self.client = client
        self._config = None

    def config(self):
        if self._config is None:
            road = self.client.road_profile
            obstacle = self.client.road_world.obstacle()
            if obstacle is None:
                self._config = BarrierConfig(lane_width=road.lane_width)
            else:
                e_v = lane_expansion_for_sharing(road.lane_width, obstacle.e_obs_l, obstacle.allow_blocking)
                self._config = BarrierConfig(lane_width=road.lane_width, e_v=e_v, obstacle=obstacle)
                log.debug('lane expansion e_v=%.4g m for e_obs_l=%.4g m', e_v, obstacle.e_obs_l)
        return self._config

    def evaluate(self, state, pose, psi_dot_ref=0.0):
        return barrier_lie_terms(state, pose, self.client.vehicle.model(), self.config(), psi_dot_ref)
