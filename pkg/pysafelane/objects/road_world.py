import bisect
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ..errors import ConventionError, ParameterDomainError

log = logging.getLogger(__name__)

CENTERLINE_STEP = 0.05
KAPPA_JOIN_TOLERANCE = 1e-9


class ErrorState(NamedTuple):
    e1: float
    e1_dot: float
    e2: float
    e2_dot: float


@dataclass
class GlobalPose:
    X: float
    Y: float
    psi_r: float
    s: float


class Reference(NamedTuple):
    psi_r: float
    psi_dot_ref: float
    delta_psi_dot_ref: float


@dataclass(frozen=True)
class RoadSegment:
    """Curvature varies linearly from `kappa_start` to `kappa_end` over `length` metres."""
    length: float
    kappa_start: float = 0.0
    kappa_end: float = None

    def __post_init__(self):
        if not self.length > 0:
            raise ParameterDomainError('road segment length must be positive, got {0}'.format(self.length))
        if self.kappa_end is None:
            object.__setattr__(self, 'kappa_end', self.kappa_start)


class RoadProfile(object):
    """
    Piecewise-linear curvature road starting at the origin with heading zero. The centerline is tabulated once by
    trapezoidal integration of the heading and interpolated afterwards.
    """

    def __init__(self, segments: Sequence[RoadSegment], lane_width=3.7):
        if not segments:
            raise ParameterDomainError('road needs at least one segment')
        if not lane_width > 0:
            raise ParameterDomainError('lane width must be positive, got {0}'.format(lane_width))
        for prev, seg in zip(segments, segments[1:]):
            if abs(prev.kappa_end - seg.kappa_start) > KAPPA_JOIN_TOLERANCE:
                raise ParameterDomainError('curvature must be continuous between road segments')
        self.segments = tuple(segments)
        self.lane_width = float(lane_width)

        self._starts = [0.0]
        self._headings = [0.0]
        for seg in self.segments:
            self._headings.append(self._headings[-1] + 0.5 * (seg.kappa_start + seg.kappa_end) * seg.length)
            self._starts.append(self._starts[-1] + seg.length)
        self.length = self._starts[-1]

        n = int(math.ceil(self.length / CENTERLINE_STEP)) + 1
        self._grid = np.linspace(0.0, self.length, n)
        psi = np.array([self.heading(s) for s in self._grid])
        self._X = cumulative_trapezoid(np.cos(psi), self._grid, initial=0.0)
        self._Y = cumulative_trapezoid(np.sin(psi), self._grid, initial=0.0)

    @classmethod
    def straight(cls, length, lane_width=3.7):
        return cls([RoadSegment(length)], lane_width)

    @classmethod
    def arc(cls, length, radius, lane_width=3.7):
        return cls([RoadSegment(length, 1.0 / radius)], lane_width)

    def _locate(self, s):
        if s < -1e-9 or s > self.length + 1e-9:
            raise ParameterDomainError('arc length {0} outside road [0, {1}]'.format(s, self.length))
        i = min(max(bisect.bisect_right(self._starts, s) - 1, 0), len(self.segments) - 1)
        return i, min(max(s - self._starts[i], 0.0), self.segments[i].length)

    def curvature(self, s):
        i, u = self._locate(s)
        seg = self.segments[i]
        return seg.kappa_start + (seg.kappa_end - seg.kappa_start) * u / seg.length

    def heading(self, s):
        i, u = self._locate(s)
        seg = self.segments[i]
        return self._headings[i] + seg.kappa_start * u + 0.5 * (seg.kappa_end - seg.kappa_start) / seg.length * u * u

    def position(self, s):
        if s < -1e-9 or s > self.length + 1e-9:
            raise ParameterDomainError('arc length {0} outside road [0, {1}]'.format(s, self.length))
        return float(np.interp(s, self._grid, self._X)), float(np.interp(s, self._grid, self._Y))

    def left_normal(self, s):
        psi = self.heading(s)
        return -math.sin(psi), math.cos(psi)

    def project(self, X, Y, s_guess=0.0, iterations=20):
        """Arc length of the centerline point closest to (X, Y), by Newton steps from s_guess."""
        s = min(max(float(s_guess), 0.0), self.length)
        for _ in range(iterations):
            x, y = self.position(s)
            psi = self.heading(s)
            nx, ny = -math.sin(psi), math.cos(psi)
            along = (X - x) * math.cos(psi) + (Y - y) * math.sin(psi)
            across = (X - x) * nx + (Y - y) * ny
            step = along / max(1.0 - self.curvature(s) * across, 1e-3)
            s_next = min(max(s + step, 0.0), self.length)
            done = abs(s_next - s) < 1e-9
            s = s_next
            if done:
                break
        return s

    def max_curvature(self):
        return max(max(abs(seg.kappa_start), abs(seg.kappa_end)) for seg in self.segments)

    def max_curvature_slope(self):
        return max(abs(seg.kappa_end - seg.kappa_start) / seg.length for seg in self.segments)

    def audit(self, v_l, c_psi, c_dpsi, T_s):
        """Bounded-reference check: |v kappa| <= c_psi and one-sample changes |v dkappa| <= c_dpsi."""
        problems = []
        peak = v_l * self.max_curvature()
        if peak > c_psi + 1e-12:
            problems.append('reference yaw rate {0:.6g} exceeds c_psi {1:.6g}'.format(peak, c_psi))
        step = v_l * self.max_curvature_slope() * v_l * T_s
        if step > c_dpsi + 1e-12:
            problems.append('reference yaw-rate step {0:.6g} exceeds c_dpsi {1:.6g}'.format(step, c_dpsi))
        return problems


def reference_at_arclength(road, s, v_l, T_s=0.05):
    """Road heading, reference yaw rate and its change over one MPC sample at arc length s."""
    kappa = road.curvature(s)
    ahead = road.curvature(min(s + v_l * T_s, road.length))
    return Reference(psi_r=road.heading(s), psi_dot_ref=v_l * kappa, delta_psi_dot_ref=v_l * (ahead - kappa))


def pose_rates(e1_dot, e2, psi_r, v_l):
    """Global velocity of the vehicle from the lateral errors and the road heading."""
    theta = e2 + psi_r
    q = e1_dot - v_l * e2
    c, s = math.cos(theta), math.sin(theta)
    return v_l * c - q * s, v_l * s + q * c


def propagate_global_pose(pose, state, v_l, dt, road):
    """
    Advances (X, Y, s) by one RK4 step with the lateral errors held over the step; the road heading follows the
    arc length.
    """
    if not dt > 0:
        raise ParameterDomainError('dt must be positive, got {0}'.format(dt))
    e1_dot, e2 = state[1], state[2]

    def rates(s):
        return pose_rates(e1_dot, e2, road.heading(min(s, road.length)), v_l)

    s0 = pose.s
    k1 = rates(s0)
    k2 = rates(s0 + 0.5 * dt * v_l)
    k3 = k2
    k4 = rates(s0 + dt * v_l)
    X = pose.X + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    Y = pose.Y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    s = s0 + v_l * dt
    return GlobalPose(X=X, Y=Y, psi_r=road.heading(min(s, road.length)), s=s)


@dataclass(frozen=True)
class Obstacle:
    """
    Static circular obstacle. `e_obs_l` is the signed lateral offset of the circle's inner edge (center offset plus
    radius); it is negative when the whole circle lies right of the centerline.
    """
    X_obs: float
    Y_obs: float
    r_obs: float
    e_obs_l: float
    delta_2: float
    s_obs: float = 0.0
    allow_blocking: bool = False

    def __post_init__(self):
        if not self.r_obs > 0:
            raise ParameterDomainError('obstacle radius must be positive, got {0}'.format(self.r_obs))
        if not self.delta_2 > self.r_obs:
            raise ParameterDomainError('detection distance delta_2 must exceed the obstacle radius')
        if self.e_obs_l - self.r_obs >= 0:
            raise ConventionError('obstacle center must lie right of the centerline')
        if self.e_obs_l >= 0 and not self.allow_blocking:
            raise ConventionError('obstacle edge crosses the centerline (e_obs_l={0}); set allow_blocking to pass it'
                                  .format(self.e_obs_l))

    @property
    def e_center(self):
        return self.e_obs_l - self.r_obs


def place_obstacle(road, s_obs, e_center, r_obs, detection_distance, allow_blocking=False):
    """
    Puts the obstacle center e_center metres along the left normal at arc length s_obs. `detection_distance` is the
    center-to-center range at which the obstacle is first seen, so delta_2^2 = detection_distance^2 - r_obs^2.
    """
    if detection_distance ** 2 - r_obs ** 2 <= 0:
        raise ParameterDomainError('detection distance must exceed the obstacle radius')
    X, Y = road.position(s_obs)
    nx, ny = road.left_normal(s_obs)
    return Obstacle(X_obs=X + e_center * nx, Y_obs=Y + e_center * ny, r_obs=r_obs, e_obs_l=e_center + r_obs,
                    delta_2=math.sqrt(detection_distance ** 2 - r_obs ** 2), s_obs=s_obs,
                    allow_blocking=allow_blocking)


def squared_obstacle_distance(X_car, Y_car, obstacle):
    dx = X_car - obstacle.X_obs
    dy = Y_car - obstacle.Y_obs
    return dx * dx + dy * dy - obstacle.r_obs ** 2


def detect_obstacle(d, delta_2, already_detected):
    return bool(already_detected or d <= delta_2 ** 2)


class DetectionLatch(object):
    """Latches the first time the squared distance falls to delta_2^2."""

    def __init__(self, delta_2):
        self.delta_2 = delta_2
        self.detected = False
        self.t_obs = None

    def update(self, t, d):
        if not self.detected and detect_obstacle(d, self.delta_2, False):
            self.detected = True
            self.t_obs = t
            log.info('obstacle detected at t=%.3f s (d=%.4g m^2)', t, d)
        return self.detected


class RoadWorld(object):
    """
    Road geometry and obstacle of one scenario.
    """

    def __init__(self, client):
        self.client = client
        self._obstacle = None

    @property
    def road(self):
        return self.client.road_profile

    def reference(self, s):
        return reference_at_arclength(self.road, s, self.client.vehicle_params.v_l, self.client.mpc_config.T_s)

    def obstacle(self):
        spec = self.client.obstacle_spec
        if spec is None:
            return None
        if self._obstacle is None:
            self._obstacle = place_obstacle(self.road, spec.s_obs, spec.e_center, spec.r_obs,
                                            spec.detection_distance, spec.allow_blocking)
        return self._obstacle

    def latch(self):
        obstacle = self.obstacle()
        return DetectionLatch(obstacle.delta_2) if obstacle is not None else None

    def audit(self):
        mpc = self.client.mpc_config
        v_l = self.client.vehicle_params.v_l
        problems = self.road.audit(v_l, mpc.c_psi, mpc.c_dpsi, mpc.T_s)
        sim = self.client.sim_config
        needed = sim.s0 + v_l * (sim.duration + mpc.N * mpc.T_s)
        if needed > self.road.length + 1e-9:
            problems.append('road length {0:.1f} m is shorter than the {1:.1f} m the run and MPC preview need'
                            .format(self.road.length, needed))
        return problems
