import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..errors import ConfigError, ParameterDomainError
from ..numerics import rk4_step
from .barriers import lie_terms_at
from .road_world import pose_rates
from .safety_filter import ESF, PRESCRIBED_TIME_MODES, Gains, control_sharing_gap

log = logging.getLogger(__name__)

SATURATION_NONE = 'none'
SATURATION_CLIP = 'hard-clip'
SATURATION_MODES = (SATURATION_NONE, SATURATION_CLIP)

COLUMNS = (
    't', 'X', 'Y', 's', 'e1', 'e1_dot', 'e2', 'e2_dot', 'psi_r', 'psi_dot_ref', 'u_s', 'u_mpc', 'u_override_l',
    'u_override_r', 'u_safe', 'u_applied', 'h_l', 'h_r', 'd', 'phi', 'mu2', 'detected', 'feasible_mpc',
    'feasible_filter', 'slack', 'singularity_count',
)
INTEGER_COLUMNS = frozenset(('detected', 'feasible_mpc', 'feasible_filter', 'singularity_count'))


@dataclass(frozen=True)
class SimConfig:
    """
    Closed-loop run settings. The plant and the filter run every `dt_f` seconds; the MPC every T_s of the MPC
    configuration, which must be an integer multiple of dt_f.
    """
    scenario_id: str = 'scenario'
    duration: float = 30.0
    dt_f: float = 1e-3
    saturation: str = SATURATION_NONE
    saturation_limit: float = None
    x0: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    s0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ParameterDomainError('duration must be positive, got {0}'.format(self.duration))
        if not self.dt_f > 0:
            raise ParameterDomainError('dt_f must be positive, got {0}'.format(self.dt_f))
        if self.saturation not in SATURATION_MODES:
            raise ParameterDomainError('saturation must be one of {0}'.format(SATURATION_MODES))
        if len(self.x0) != 4:
            raise ParameterDomainError('x0 needs four entries, got {0}'.format(len(self.x0)))

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt_f))


@dataclass
class SimLog:
    """One row per fine step; `meta` keeps what a replay needs besides the rows."""
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        i = COLUMNS.index(name)
        return np.array([row[i] for row in self.rows], dtype=float)

    def to_csv(self, path):
        with open(path, 'w', encoding='utf-8', newline='') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow([_format(name, value) for name, value in zip(COLUMNS, row)])
        return path

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding='utf-8', newline='') as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise ConfigError('unexpected log header in {0}'.format(path))
            rows = []
            for line, record in enumerate(reader, start=2):
                if len(record) != len(COLUMNS):
                    raise ConfigError('line {0} of {1} has {2} fields'.format(line, path, len(record)))
                try:
                    rows.append([int(v) if name in INTEGER_COLUMNS else float(v)
                                 for name, v in zip(COLUMNS, record)])
                except ValueError as err:
                    raise ConfigError('line {0} of {1}: {2}'.format(line, path, err))
        meta = {}
        summary = os.path.splitext(path)[0] + '.json'
        if os.path.exists(summary):
            with open(summary, encoding='utf-8') as fh:
                meta = json.load(fh).get('meta', {})
        return cls(rows=rows, meta=meta)


def _format(name, value):
    if name in INTEGER_COLUMNS:
        return str(int(value))
    return '{0:.9g}'.format(value)


def summarize(sim_log):
    """Run metrics written next to every log."""
    if not len(sim_log):
        return {}
    u_safe, u_mpc = sim_log.column('u_safe'), sim_log.column('u_mpc')
    e1, e2 = sim_log.column('e1'), sim_log.column('e2')
    d = sim_log.column('d')
    finite_d = d[np.isfinite(d)]
    return {
        'rows': len(sim_log),
        'min_h_l': float(sim_log.column('h_l').min()),
        'min_h_r': float(sim_log.column('h_r').min()),
        'min_d': float(finite_d.min()) if finite_d.size else None,
        'peak_override': float(np.abs(u_safe - u_mpc).max()),
        'max_lateral_offset': float(np.abs(e1 * np.cos(e2)).max()),
        'mpc_infeasible_steps': int((sim_log.column('feasible_mpc') == 0).sum()),
        'filter_infeasible_steps': int((sim_log.column('feasible_filter') == 0).sum()),
        'singularities': int(sim_log.column('singularity_count')[-1]),
        'max_slack': float(sim_log.column('slack').max()),
        'max_abs_u_applied': float(np.abs(sim_log.column('u_applied')).max()),
        'meta': sim_log.meta,
    }


def _obstacle_meta(obstacle):
    if obstacle is None:
        return None
    return {'X': obstacle.X_obs, 'Y': obstacle.Y_obs, 'r': obstacle.r_obs, 'delta_2': obstacle.delta_2}


def simulate_scenario(client):
    """Runs one closed-loop scenario and returns its log."""
    return SimEngine(client).run()


class SimEngine(object):
    """
    Closed loop of plant, MPC and safety filter. The MPC command is held between its samples; the filter and the
    saturation stage act on every fine step before the RK4 update.
    """

    def __init__(self, client):
        self.client = client

    def _plant(self, model, road, v_l, u):
        A, B, G = model.A, model.B, model.G

        def f(t, z):
            s = min(z[6], road.length)
            psi_dot_ref = v_l * road.curvature(s)
            x_dot = A @ z[:4] + B * u + G * psi_dot_ref
            X_dot, Y_dot = pose_rates(z[1], z[2], road.heading(s), v_l)
            return np.array([x_dot[0], x_dot[1], x_dot[2], x_dot[3], X_dot, Y_dot, v_l])

        return f

    def run(self):
        client = self.client
        sim, mpc_cfg = client.sim_config, client.mpc_config
        road = client.road_profile
        model = client.vehicle.model()
        v_l = model.v_l
        ratio = mpc_cfg.T_s / sim.dt_f
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError('MPC period must be an integer multiple of dt_f', key='sim.dt_f')
        ratio = int(round(ratio))

        tracker = client.mpc
        tracker.reset()
        safety = client.new_filter()
        limit = sim.saturation_limit if sim.saturation_limit is not None else mpc_cfg.u_max

        X0, Y0 = road.position(sim.s0)
        nx, ny = road.left_normal(sim.s0)
        x0 = np.asarray(sim.x0, dtype=float)
        z = np.array([x0[0], x0[1], x0[2], x0[3], X0 + x0[0] * nx, Y0 + x0[0] * ny, sim.s0])

        out = SimLog(meta={'scenario': sim.scenario_id, 'dt_f': sim.dt_f, 'T_s': mpc_cfg.T_s})
        log.info('scenario %s: %.2f s at dt_f=%g s', sim.scenario_id, sim.duration, sim.dt_f)
        u_mpc = u_s = 0.0
        feasible_mpc = True
        for k in range(sim.n_steps + 1):
            t = k * sim.dt_f
            s = float(z[6])
            ref = client.road_world.reference(min(s, road.length))
            if k % ratio == 0:
                preview = [v_l * road.curvature(min(s + v_l * mpc_cfg.T_s * i, road.length))
                           for i in range(mpc_cfg.N + 1)]
                x_s, _ = client.vehicle.steady_state(ref.psi_dot_ref)
                result = tracker.step(z[:4] - x_s, preview)
                u_mpc, u_s, feasible_mpc = result.u, result.u_s, result.feasible

            stacked = (z[0], z[1], z[2], z[3], z[4], z[5], ref.psi_r)
            fs = safety.step(t, stacked, ref.psi_dot_ref, u_mpc, s)
            u_applied = fs.u_applied
            if sim.saturation == SATURATION_CLIP and limit is not None:
                u_applied = min(max(u_applied, -limit), limit)

            dec = fs.decision
            out.rows.append([
                t, z[4], z[5], s, z[0], z[1], z[2], z[3], ref.psi_r, ref.psi_dot_ref, u_s, u_mpc,
                dec.u_override_l, dec.u_override_r, fs.u_applied, u_applied, fs.h_l, fs.h_r, fs.d, fs.phi, fs.mu2,
                int(fs.detected), int(feasible_mpc), int(dec.feasible), dec.slack, safety.singularities,
            ])
            if k == sim.n_steps:
                break
            z = rk4_step(self._plant(model, road, v_l, u_applied), z, t, sim.dt_f)

        out.meta.update({
            't_obs': safety.t_obs,
            't_pass': safety.pt.t_pass if safety.pt is not None else None,
            'tau_ramp': client.filter_config.tau_ramp,
            'filter_enabled': client.filter_config.enabled,
            'lane_width': road.lane_width,
            'e_v': safety.barrier_config.e_v,
            'obstacle': _obstacle_meta(safety.barrier_config.obstacle),
        })
        log.info('scenario %s finished: %d rows, %d MPC infeasible steps, %d singularities',
                 sim.scenario_id, len(out), tracker.infeasible_steps, safety.singularities)
        return out


@dataclass
class ReplayReport:
    violations: list = field(default_factory=list)
    unsafe: list = field(default_factory=list)
    min_h_l: float = math.inf
    min_h_r: float = math.inf

    @property
    def ok(self):
        return not self.violations


def replay_check(sim_log, client, tol=1e-6, safety_tol=1e-6):
    """
    Recomputes the barrier values, the smooth step and, for equal constant-gain designs, the control-sharing gap
    from the logged states. Mismatches beyond `tol` are violations; barrier values below -safety_tol are listed as
    unsafe samples.
    """
    report = ReplayReport()
    model = client.vehicle.model()
    full = client.barriers.config()
    lane = full.lane_only()
    fcfg = client.filter_config
    t_pass = sim_log.meta.get('t_pass')
    pt_mode = fcfg.oa_mode in PRESCRIBED_TIME_MODES and fcfg.enabled
    sharing = (fcfg.enabled and fcfg.lk_mode == ESF and fcfg.oa_mode == ESF and
               tuple(fcfg.lk_gains) == tuple(fcfg.oa_gains) and full.obstacle is not None and
               abs(full.e_v - full.obstacle_gain) <= 1e-12)
    idx = {name: i for i, name in enumerate(COLUMNS)}

    for n, row in enumerate(sim_log.rows):
        t = row[idx['t']]
        z = (row[idx['e1']], row[idx['e1_dot']], row[idx['e2']], row[idx['e2_dot']], row[idx['X']], row[idx['Y']],
             row[idx['psi_r']])
        psi_dot_ref = row[idx['psi_dot_ref']]
        ev_full = lie_terms_at(z, psi_dot_ref, model, full)
        active = lane if (pt_mode and t_pass is not None and t >= t_pass) else full
        ev = ev_full if active is full else lie_terms_at(z, psi_dot_ref, model, active)

        for name, value in (('h_l', ev.h_l), ('h_r', ev.h_r), ('phi', ev_full.phi)):
            logged = row[idx[name]]
            if abs(logged - value) > tol * max(1.0, abs(value)):
                report.violations.append((n, name, logged, value))
        report.min_h_l = min(report.min_h_l, row[idx['h_l']])
        report.min_h_r = min(report.min_h_r, row[idx['h_r']])
        for name in ('h_l', 'h_r'):
            if row[idx[name]] < -safety_tol:
                report.unsafe.append((n, name, row[idx[name]]))

        if sharing and active is full:
            u_l, u_r = row[idx['u_override_l']], row[idx['u_override_r']]
            if not (math.isnan(u_l) or math.isnan(u_r)) and abs(ev.LgLf_h_l) > fcfg.eps_lg:
                expected = control_sharing_gap(ev, Gains(*fcfg.lk_gains), full.lane_width)
                if abs((u_l - u_r) - expected) > max(tol, 1e-6 * abs(expected)):
                    report.violations.append((n, 'sharing', u_l - u_r, expected))
    if report.violations:
        log.warning('replay found %d inconsistent samples', len(report.violations))
    return report
