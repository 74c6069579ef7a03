import logging
from dataclasses import replace

from .config import load_scenario
from .errors import ConfigError, SafeLaneArgumentError, SafeLaneError
from .objects.barriers import Barriers
from .objects.mpc_tracker import MpcTracker
from .objects.road_world import RoadWorld
from .objects.safety_filter import SafetyFilter
from .objects.sim_engine import SimEngine, replay_check, summarize
from .objects.vehicle_model import VehicleModel

log = logging.getLogger(__name__)


class SafeLaneClient(object):
    """
    One scenario with its helper objects. Each helper takes the client and reads the configuration it needs from
    it, so a client is cheap to copy with different settings through `with_overrides`.
    """

    def __init__(self, scenario):
        if scenario is None:
            raise SafeLaneArgumentError('a scenario is required')
        self.scenario = scenario
        self.name = scenario.name
        self.vehicle_params = scenario.vehicle
        self.road_profile = scenario.road
        self.obstacle_spec = scenario.obstacle
        self.filter_config = scenario.filter
        self.mpc_config = scenario.mpc
        self.sim_config = scenario.sim
        self.acceptance = scenario.acceptance
        self.vehicle = VehicleModel(self)
        self.road_world = RoadWorld(self)
        self.barriers = Barriers(self)
        self.mpc = MpcTracker(self)
        self.engine = SimEngine(self)

    @classmethod
    def from_file(cls, path):
        if not path:
            raise SafeLaneArgumentError('a scenario path is required')
        return cls(load_scenario(path))

    def with_overrides(self, **sections):
        """
        Copy of this client with whole sections or single fields replaced, e.g. with_overrides(sim={'dt_f': 5e-4})
        or with_overrides(filter={'enabled': False}).
        """
        changes = {}
        for section, values in sections.items():
            current = getattr(self.scenario, section, None)
            if section not in ('vehicle', 'obstacle', 'filter', 'mpc', 'sim', 'acceptance'):
                raise SafeLaneArgumentError('cannot override section {0!r}'.format(section))
            changes[section] = replace(current, **values) if isinstance(values, dict) else values
        return SafeLaneClient(replace(self.scenario, **changes))

    def new_filter(self):
        return SafetyFilter(self)

    def audit(self):
        """
        Runs every configuration audit and returns the problems found. Obstacle convention errors and numerical
        failures of the terminal ingredients are reported as problems too.
        """
        problems = []
        try:
            problems += self.vehicle.audit()
            problems += self.road_world.audit()
            self.barriers.config()
            problems += self.mpc.audit()
        except SafeLaneError as err:
            problems.append(str(err))
        ratio = self.mpc_config.T_s / self.sim_config.dt_f
        if abs(ratio - round(ratio)) > 1e-9:
            problems.append('mpc.T_s={0} is not an integer multiple of sim.dt_f={1}'.format(
                self.mpc_config.T_s, self.sim_config.dt_f))
        for problem in problems:
            log.warning('%s: %s', self.name, problem)
        return problems

    def validate(self):
        problems = self.audit()
        if problems:
            raise ConfigError('; '.join(problems), key=self.name)
        return True

    def run(self):
        """Audits the scenario and runs it; returns the SimLog."""
        self.validate()
        return self.engine.run()

    def lane_bound(self):
        """Largest admissible |e1 cos e2| on the expanded side of the lane."""
        cfg = self.barriers.config()
        return 0.5 * cfg.lane_width + cfg.e_v

    def summary(self, sim_log):
        summary = summarize(sim_log)
        failed = self.acceptance.evaluate(summary, self.lane_bound())
        summary['acceptance'] = {'passed': not failed, 'failed': failed}
        return summary

    def replay(self, sim_log, tol=1e-9):
        return replay_check(sim_log, self, tol=tol)
