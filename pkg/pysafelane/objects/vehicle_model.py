import logging
from dataclasses import dataclass, fields

import numpy as np

from ..errors import ParameterDomainError
from ..numerics import matrix_exponential

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VehicleParams:
    """
    Physical parameters of the single-track lateral model. Cornering stiffnesses are per axle.
    Defaults describe a mid-size sedan at highway speed.
    """
    m: float = 1600.0
    I_z: float = 2500.0
    l_f: float = 1.2
    l_r: float = 1.4
    C_af: float = 80000.0
    C_ar: float = 80000.0
    v_l: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterDomainError('{0} must be strictly positive, got {1}'.format(f.name, value))

    @property
    def wheelbase(self):
        return self.l_f + self.l_r

    @property
    def understeer_gradient(self):
        L = self.wheelbase
        return self.m * self.l_r / (L * self.C_af) - self.m * self.l_f / (L * self.C_ar)

    @property
    def rear_slip_coefficient(self):
        return self.m * self.l_f * self.v_l / (self.wheelbase * self.C_ar)


@dataclass(frozen=True)
class LateralModel:
    """
    x' = A x + B u + G psi_dot_ref with x = [e1, e1_dot, e2, e2_dot]. B and G are column vectors stored flat.
    `x_bar` and `u_bar` are the per-unit-yaw-rate steady state and steering.
    """
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    v_l: float
    k_v: float = 0.0
    alpha_r: float = 0.0
    x_bar: np.ndarray = None
    u_bar: float = 0.0

    def __post_init__(self):
        if self.x_bar is None:
            object.__setattr__(self, 'x_bar', np.zeros(self.A.shape[0]))

    @property
    def n(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteModel:
    """Zero-order-hold sampled model; the steady-state data rides along for the MPC disturbance."""
    A_d: np.ndarray
    B_d: np.ndarray
    G_d: np.ndarray
    T_s: float
    x_bar: np.ndarray = None
    u_bar: float = 0.0

    def __post_init__(self):
        if self.x_bar is None:
            object.__setattr__(self, 'x_bar', np.zeros(self.A_d.shape[0]))

    @property
    def n(self):
        return self.A_d.shape[0]

    def steady_state_offset(self):
        """b = A_d x_bar + B_d u_bar + G_d, the disturbance direction per unit change of reference yaw rate."""
        return self.A_d @ self.x_bar + self.B_d * self.u_bar + self.G_d


def build_lateral_model(p):
    """Error-frame lateral dynamics of a single-track vehicle at constant longitudinal speed."""
    if not isinstance(p, VehicleParams):
        raise ParameterDomainError('expected VehicleParams, got {0}'.format(type(p).__name__))
    m, I_z, l_f, l_r, C_f, C_r, v = p.m, p.I_z, p.l_f, p.l_r, p.C_af, p.C_ar, p.v_l

    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -(C_f + C_r) / (m * v), (C_f + C_r) / m, (-C_f * l_f + C_r * l_r) / (m * v)],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -(C_f * l_f - C_r * l_r) / (I_z * v), (C_f * l_f - C_r * l_r) / I_z,
         -(C_f * l_f ** 2 + C_r * l_r ** 2) / (I_z * v)],
    ])
    B = np.array([0.0, C_f / m, 0.0, C_f * l_f / I_z])
    G = np.array([0.0, -(C_f * l_f - C_r * l_r) / (m * v) - v, 0.0, -(C_f * l_f ** 2 + C_r * l_r ** 2) / (I_z * v)])

    k_v = p.understeer_gradient
    alpha_r = p.rear_slip_coefficient
    if not (np.isfinite(k_v) and np.isfinite(alpha_r)):
        raise ParameterDomainError('understeer gradient or rear slip coefficient is not finite')
    u_bar = p.wheelbase / v + k_v * v
    x_bar = np.array([0.0, 0.0, -l_r / v + alpha_r, 0.0])
    return LateralModel(A=A, B=B, G=G, v_l=v, k_v=k_v, alpha_r=alpha_r, x_bar=x_bar, u_bar=u_bar)


def steady_state_tuple(model, psi_dot_ref):
    """Returns (x_s, u_s) with A x_s + B u_s + G psi_dot_ref = 0."""
    return psi_dot_ref * model.x_bar, psi_dot_ref * model.u_bar


def steady_state_residual(model, psi_dot_ref):
    x_s, u_s = steady_state_tuple(model, psi_dot_ref)
    return float(np.abs(model.A @ x_s + model.B * u_s + model.G * psi_dot_ref).max())


def discretize_zoh(model, T_s):
    """
    Zero-order-hold discretization. A_d, B_d and G_d come from one exponential of the augmented matrix
    [[A, B, G], [0, 0, 0]] * T_s.
    """
    if not T_s > 0:
        raise ParameterDomainError('T_s must be positive, got {0}'.format(T_s))
    n = model.A.shape[0]
    M = np.zeros((n + 2, n + 2))
    M[:n, :n] = model.A
    M[:n, n] = model.B
    M[:n, n + 1] = model.G
    E = matrix_exponential(M * T_s)
    return DiscreteModel(A_d=E[:n, :n], B_d=E[:n, n].copy(), G_d=E[:n, n + 1].copy(), T_s=T_s,
                         x_bar=np.array(model.x_bar, dtype=float), u_bar=model.u_bar)


def controllability_singular_values(model_d):
    n = model_d.n
    cols = [model_d.B_d]
    for _ in range(n - 1):
        cols.append(model_d.A_d @ cols[-1])
    return np.linalg.svd(np.column_stack(cols), compute_uv=False)


def is_controllable(model_d, rel_tol=1e-8):
    sv = controllability_singular_values(model_d)
    return bool(sv[-1] >= rel_tol * sv[0])


class VehicleModel(object):
    """
    Continuous and sampled lateral model of the scenario vehicle. Matrices are built lazily and cached on first use.
    """

    def __init__(self, client):
        self.client = client
        self._model = None
        self._discrete = {}

    @property
    def params(self):
        return self.client.vehicle_params

    def model(self):
        if self._model is None:
            self._model = build_lateral_model(self.params)
            log.debug('lateral model built: k_v=%.6g alpha_r=%.6g u_bar=%.6g',
                      self._model.k_v, self._model.alpha_r, self._model.u_bar)
        return self._model

    def steady_state(self, psi_dot_ref):
        return steady_state_tuple(self.model(), psi_dot_ref)

    def discretize(self, T_s=None):
        if T_s is None:
            T_s = self.client.mpc_config.T_s
        if T_s not in self._discrete:
            self._discrete[T_s] = discretize_zoh(self.model(), T_s)
        return self._discrete[T_s]

    def audit(self):
        """Returns a list of problems with the sampled model; empty when controllable."""
        model_d = self.discretize()
        if not is_controllable(model_d):
            sv = controllability_singular_values(model_d)
            return ['sampled pair (A_d, B_d) is not controllable: singular values {0}'.format(np.array2string(sv))]
        return []
