"""
Scenario files. A scenario is a YAML mapping with `version: 1` and the sections below; every key is optional
unless noted and falls back to the dataclass default. Unknown keys are rejected at any level.

    version: 1
    name: scenario_a_esf
    vehicle:    {m, I_z, l_f, l_r, C_af, C_ar, v_l}
    road:       {lane_width, segments: [{length, kappa_start, kappa_end} or {length, radius}]}   (segments required)
    obstacle:   {s_obs, e_center, r_obs, detection_distance, allow_blocking}                  (optional section)
    filter:     {lk_mode, oa_mode, lk_gains, oa_gains, oa_initial_gains, lk_c3, oa_c3, u_max, mu_max, tau_ramp,
                 eps_lg, rho, enabled}
    mpc:        {N, Q, R, beta, T_s, u_max, c_psi, c_dpsi, terminal_mode}
    sim:        {duration, dt_f, saturation, saturation_limit, x0, s0, seed}
    acceptance: {min_h, min_d, collision, max_filter_infeasible, max_mpc_infeasible, max_singularities,
                 within_expanded_lane, peak_override_reduction}                               (optional section)

Angles are in radians, lengths in metres, times in seconds.
"""
import logging
import os
from dataclasses import dataclass, fields
from typing import Optional

import yaml

from .errors import ConfigError, SafeLaneError
from .objects.mpc_tracker import MpcConfig
from .objects.road_world import RoadProfile, RoadSegment
from .objects.safety_filter import FilterConfig
from .objects.sim_engine import SimConfig
from .objects.vehicle_model import VehicleParams

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TOP_LEVEL_KEYS = ('version', 'name', 'vehicle', 'road', 'obstacle', 'filter', 'mpc', 'sim', 'acceptance')
SEGMENT_KEYS = ('length', 'kappa_start', 'kappa_end', 'radius')
TUPLE_FIELDS = ('lk_gains', 'oa_gains', 'oa_initial_gains', 'Q', 'x0')


@dataclass(frozen=True)
class ObstacleSpec:
    """Road-relative placement of the obstacle; `e_center` is negative right of the centerline."""
    s_obs: float = 250.0
    e_center: float = -1.0
    r_obs: float = 1.5
    detection_distance: float = 40.0
    allow_blocking: bool = False


@dataclass(frozen=True)
class AcceptanceSpec:
    """
    Properties a run must show. `collision` asks for min d < 0 (unfiltered baselines); `peak_override_reduction`
    is the relative reduction the compare command requires of this scenario against the other one.
    """
    min_h: Optional[float] = None
    min_d: Optional[float] = None
    collision: bool = False
    max_filter_infeasible: Optional[int] = None
    max_mpc_infeasible: Optional[int] = None
    max_singularities: Optional[int] = None
    within_expanded_lane: bool = False
    peak_override_reduction: Optional[float] = None

    def evaluate(self, summary, lane_bound=None):
        """Returns the failed properties of one run summary as readable strings."""
        failed = []
        if self.min_h is not None:
            for key in ('min_h_l', 'min_h_r'):
                if summary[key] < self.min_h:
                    failed.append('{0}={1:.6g} below {2:.6g}'.format(key, summary[key], self.min_h))
        min_d = summary.get('min_d')
        if self.min_d is not None and (min_d is None or min_d < self.min_d):
            failed.append('min_d={0} below {1:.6g}'.format(min_d, self.min_d))
        if self.collision and not (min_d is not None and min_d < 0):
            failed.append('expected a collision, min_d={0}'.format(min_d))
        for attr, key in (('max_filter_infeasible', 'filter_infeasible_steps'),
                          ('max_mpc_infeasible', 'mpc_infeasible_steps'), ('max_singularities', 'singularities')):
            limit = getattr(self, attr)
            if limit is not None and summary[key] > limit:
                failed.append('{0}={1} above {2}'.format(key, summary[key], limit))
        if self.within_expanded_lane and lane_bound is not None and summary['max_lateral_offset'] > lane_bound:
            failed.append('lateral offset {0:.6g} leaves the expanded lane {1:.6g}'.format(
                summary['max_lateral_offset'], lane_bound))
        return failed


@dataclass(frozen=True)
class Scenario:
    name: str
    vehicle: VehicleParams
    road: RoadProfile
    obstacle: Optional[ObstacleSpec]
    filter: FilterConfig
    mpc: MpcConfig
    sim: SimConfig
    acceptance: AcceptanceSpec
    path: Optional[str] = None


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError('expected a mapping, got {0}'.format(type(section).__name__), key=where)
    for key in section:
        if key not in allowed:
            raise ConfigError('unknown key', key='{0}.{1}'.format(where, key) if where else key)


def _build(cls, section, where, exclude=()):
    """Instantiates a frozen dataclass from a mapping, rejecting keys that are not fields."""
    section = {} if section is None else section
    names = tuple(f.name for f in fields(cls) if f.name not in exclude)
    _check_keys(section, names, where)
    kwargs = {key: tuple(value) if key in TUPLE_FIELDS and isinstance(value, list) else value
              for key, value in section.items()}
    try:
        return cls(**kwargs)
    except SafeLaneError as err:
        raise ConfigError(getattr(err, 'message', str(err)), key=where)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err), key=where)


def _segment(entry, where):
    _check_keys(entry, SEGMENT_KEYS, where)
    if 'length' not in entry:
        raise ConfigError('missing key', key=where + '.length')
    if 'radius' in entry:
        if 'kappa_start' in entry or 'kappa_end' in entry:
            raise ConfigError('radius cannot be combined with kappa_start/kappa_end', key=where)
        if not entry['radius']:
            raise ConfigError('radius must be nonzero', key=where + '.radius')
        return RoadSegment(length=entry['length'], kappa_start=1.0 / entry['radius'])
    return RoadSegment(length=entry['length'], kappa_start=entry.get('kappa_start', 0.0),
                       kappa_end=entry.get('kappa_end'))


def _road(section):
    if section is None:
        raise ConfigError('missing section', key='road')
    _check_keys(section, ('lane_width', 'segments'), 'road')
    segments = section.get('segments')
    if not segments:
        raise ConfigError('at least one segment is required', key='road.segments')
    try:
        built = [_segment(entry, 'road.segments[{0}]'.format(i)) for i, entry in enumerate(segments)]
        return RoadProfile(built, lane_width=section.get('lane_width', 3.7))
    except ConfigError:
        raise
    except SafeLaneError as err:
        raise ConfigError(err.message, key='road')


def parse_scenario(data, name=None, path=None):
    """Builds a Scenario from an already parsed YAML document."""
    _check_keys(data, TOP_LEVEL_KEYS, '')
    if data.get('version') != SCHEMA_VERSION:
        raise ConfigError('unsupported schema version {0!r}, expected {1}'.format(data.get('version'),
                                                                                 SCHEMA_VERSION), key='version')
    name = data.get('name') or name or 'scenario'
    sim_section = data.get('sim') or {}
    _check_keys(sim_section, tuple(f.name for f in fields(SimConfig) if f.name != 'scenario_id'), 'sim')
    sim_section = dict(sim_section)
    sim_section['scenario_id'] = name
    obstacle = data.get('obstacle')
    return Scenario(
        name=name,
        vehicle=_build(VehicleParams, data.get('vehicle'), 'vehicle'),
        road=_road(data.get('road')),
        obstacle=_build(ObstacleSpec, obstacle, 'obstacle') if obstacle is not None else None,
        filter=_build(FilterConfig, data.get('filter'), 'filter'),
        mpc=_build(MpcConfig, data.get('mpc'), 'mpc', exclude=('P', 'K')),
        sim=_build(SimConfig, sim_section, 'sim'),
        acceptance=_build(AcceptanceSpec, data.get('acceptance'), 'acceptance'),
        path=path,
    )


def load_scenario(path):
    """Reads and validates one scenario file. Raises ConfigError for missing files and schema violations."""
    if not os.path.isfile(path):
        raise ConfigError('scenario file not found: {0}'.format(path))
    try:
        with open(path, encoding='utf-8') as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ConfigError('cannot parse {0}: {1}'.format(path, err))
    if data is None:
        raise ConfigError('scenario file is empty: {0}'.format(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    scenario = parse_scenario(data, name=stem, path=path)
    log.debug('loaded scenario %s from %s', scenario.name, path)
    return scenario


def shipped_scenarios():
    """Paths of the scenario files installed with the package."""
    folder = os.path.join(os.path.dirname(__file__), 'scenarios')
    return sorted(os.path.join(folder, f) for f in os.listdir(folder) if f.endswith('.yaml'))
