import math
import unittest

import numpy as np

from pysafelane.errors import ConventionError, ParameterDomainError
from pysafelane.objects.barriers import (
	LEFT, RIGHT, BarrierConfig, barrier_lie_terms, barrier_values, drift, input_field, lane_expansion_for_sharing,
	lie_terms_at, smooth_step, smooth_step_second_derivative)
from pysafelane.objects.road_world import ErrorState, GlobalPose, place_obstacle, pose_rates
from pysafelane.objects.safety_filter import sample_states
from .test_base import SafeLaneTestCase, make_client, scenario_a_obstacle, scenario_a_road

FD_STEP = 1e-5


def directional(fn, z, direction, step=FD_STEP):
	z, direction = np.asarray(z, dtype=float), np.asarray(direction, dtype=float)
	return (fn(z + step * direction) - fn(z - step * direction)) / (2.0 * step)


class BarrierTestCase(SafeLaneTestCase):
	def setUp(self):
		self.road = scenario_a_road()
		self.obstacle = place_obstacle(self.road, 260.0, -1.0, 1.5, 40.0, allow_blocking=True)
		self.e_v = lane_expansion_for_sharing(3.7, self.obstacle.e_obs_l, allow_blocking=True)
		self.cfg = BarrierConfig(lane_width=3.7, e_v=self.e_v, obstacle=self.obstacle)

	def states(self, n, seed=0):
		"""Random states near the obstacle with a random reference yaw rate, away from the d = 0 branch join."""
		rng = np.random.default_rng(seed + 1)
		for z, _ in sample_states(self.road, self.obstacle, 3.7, self.e_v, n, seed):
			if lie_terms_at(z, 0.0, self.model, self.cfg).d < 0.5:
				continue
			yield z, rng.uniform(-0.02, 0.02)


class TestSmoothStep(SafeLaneTestCase):
	def test_branches(self):
		self.assertEqual(smooth_step(-1.0, 5.0), (1.0, 0.0))
		self.assertEqual(smooth_step(25.0, 5.0), (0.0, 0.0))
		self.assertEqual(smooth_step(30.0, 5.0), (0.0, 0.0))
		phi, _ = smooth_step(12.5, 5.0)
		self.assertAlmostEqual(phi, math.exp(1.0 - 25.0 / 12.5), places=15)
		with self.assertRaises(ParameterDomainError):
			smooth_step(1.0, 0.0)

	def test_derivatives_match_finite_differences(self):
		for d in np.linspace(0.5, 24.5, 25):
			phi_plus, _ = smooth_step(d + 1e-6, 5.0)
			phi_minus, _ = smooth_step(d - 1e-6, 5.0)
			_, dphi = smooth_step(d, 5.0)
			self.assertClose(dphi, (phi_plus - phi_minus) / 2e-6, rtol=1e-5, atol=1e-10)
			slope_plus = smooth_step(d + 1e-6, 5.0)[1]
			slope_minus = smooth_step(d - 1e-6, 5.0)[1]
			self.assertClose(smooth_step_second_derivative(d, 5.0), (slope_plus - slope_minus) / 2e-6, rtol=1e-4,
				atol=1e-8)

	def test_flat_at_detection_boundary(self):
		_, dphi = smooth_step(25.0 - 1e-3, 5.0)
		self.assertLess(abs(dphi), 1e-100)

	def test_slope_at_obstacle_edge(self):
		# the inner branch join is not C1: the slope tends to -1/delta^2 from outside
		_, dphi = smooth_step(1e-12, 5.0)
		self.assertAlmostEqual(dphi, -1.0 / 25.0, places=9)

	def test_monotone(self):
		phis = [smooth_step(d, 5.0)[0] for d in np.linspace(-1.0, 26.0, 10000)]
		self.assertTrue(all(b <= a for a, b in zip(phis, phis[1:])))
		self.assertEqual(phis[0], 1.0)
		self.assertEqual(phis[-1], 0.0)

	def test_vanishes_faster_than_any_power_at_detection_boundary(self):
		for k in (1, 2):
			ratios = []
			for j in range(1, 7):
				gap = 25.0 * 10.0 ** -j
				ratios.append(smooth_step(25.0 - gap, 5.0)[0] / gap ** k)
			self.assertTrue(all(b < a or b == 0.0 for a, b in zip(ratios, ratios[1:])))
			self.assertLess(ratios[0], 1e-4)
			self.assertLess(ratios[2], 1e-300)


class TestLaneExpansion(SafeLaneTestCase):
	def test_expansion(self):
		self.assertAlmostEqual(lane_expansion_for_sharing(3.7, -0.5), 1.35, places=15)
		self.assertAlmostEqual(lane_expansion_for_sharing(3.7, 0.5, allow_blocking=True), 2.35, places=15)

	def test_conventions(self):
		with self.assertRaises(ConventionError):
			lane_expansion_for_sharing(3.7, 0.5)
		with self.assertRaises(ConventionError):
			lane_expansion_for_sharing(3.7, -2.0)

	def test_config_validation(self):
		with self.assertRaises(ParameterDomainError):
			BarrierConfig(lane_width=0.0)
		with self.assertRaises(ParameterDomainError):
			BarrierConfig(e_v=-1.0)
		self.assertEqual(BarrierConfig().delta_2, math.inf)
		self.assertEqual(BarrierConfig().obstacle_gain, 0.0)


class TestBarrierAlgebra(BarrierTestCase):
	def test_lane_only_barrier(self):
		cfg = BarrierConfig(lane_width=3.7)
		h_l, h_r = barrier_values(ErrorState(0.5, 0.0, 0.0, 0.0), GlobalPose(0.0, 0.0, 0.0, 0.0), cfg)
		self.assertAlmostEqual(h_l, 1.35, places=15)
		self.assertAlmostEqual(h_r, 2.35, places=15)

	def test_sum_is_lane_width(self):
		for z, psi_dot_ref in self.states(1000):
			ev = lie_terms_at(z, psi_dot_ref, self.model, self.cfg)
			self.assertClose(ev.h_l + ev.h_r, 3.7, atol=1e-12)
			self.assertClose(ev.LgLf_h_l + ev.LgLf_h_r, 0.0, atol=1e-12 * max(1.0, abs(ev.LgLf_h_l)))
			self.assertClose(ev.Lf_h_l + ev.Lf_h_r, 0.0, atol=1e-10 * max(1.0, abs(ev.Lf_h_l)))

	def test_values_agree_with_lie_terms(self):
		for z, psi_dot_ref in self.states(50):
			pose = GlobalPose(z[4], z[5], z[6], 0.0)
			h_l, h_r = barrier_values(z[:4], pose, self.cfg)
			ev = barrier_lie_terms(z[:4], pose, self.model, self.cfg, psi_dot_ref)
			self.assertClose([h_l, h_r], [ev.h_l, ev.h_r], atol=1e-14)
			self.assertEqual(ev.side(LEFT).h, ev.h_l)
			self.assertEqual(ev.side(RIGHT).LgLf_h, ev.LgLf_h_r)
		with self.assertRaises(ParameterDomainError):
			ev.side('x')

	def test_obstacle_pushes_right_barrier_down(self):
		z = np.array([0.0, 0.0, 0.0, 0.0, self.obstacle.X_obs, self.obstacle.Y_obs + 1.0, self.road.heading(260.0)])
		ev = lie_terms_at(z, 0.0, self.model, self.cfg)
		self.assertEqual(ev.phi, 1.0)
		self.assertAlmostEqual(ev.h_r, 1.85 - (1.85 + self.obstacle.e_obs_l), places=9)


class TestLieDerivatives(BarrierTestCase):
	def test_against_finite_differences(self):
		g = input_field(self.model)
		for z, psi_dot_ref in self.states(1000, seed=7):
			f = drift(z, psi_dot_ref, self.model)
			ev = lie_terms_at(z, psi_dot_ref, self.model, self.cfg)
			for side in (LEFT, RIGHT):
				def h(x):
					return lie_terms_at(x, psi_dot_ref, self.model, self.cfg).side(side).h

				def Lf_h(x):
					return lie_terms_at(x, psi_dot_ref, self.model, self.cfg).side(side).Lf_h

				terms = ev.side(side)
				self.assertClose(directional(h, z, f), terms.Lf_h, rtol=1e-6, atol=1e-6)
				self.assertClose(directional(h, z, g), 0.0, atol=1e-6)
				self.assertClose(directional(Lf_h, z, f), terms.Lf2_h, rtol=1e-4, atol=1e-4)
				self.assertClose(directional(Lf_h, z, g), terms.LgLf_h, rtol=1e-4, atol=1e-4)

	def test_drift_moves_pose_like_road_kinematics(self):
		for z, psi_dot_ref in self.states(5, seed=8):
			f = drift(z, psi_dot_ref, self.model)
			self.assertEqual(tuple(f[4:6]), pose_rates(z[1], z[2], z[6], self.model.v_l))
			self.assertEqual(f[6], psi_dot_ref)


class TestBarriersHelper(SafeLaneTestCase):
	def test_config_uses_sharing_expansion(self):
		client = make_client(road=scenario_a_road(), obstacle=scenario_a_obstacle())
		cfg = client.barriers.config()
		self.assertAlmostEqual(cfg.e_v, cfg.obstacle_gain, places=15)
		self.assertIs(cfg, client.barriers.config())
		lane = cfg.lane_only()
		self.assertIsNone(lane.obstacle)
		self.assertEqual(lane.e_v, 0.0)

	def test_evaluate_without_obstacle(self):
		client = make_client()
		ev = client.barriers.evaluate(ErrorState(0.0, 0.0, 0.0, 0.0), GlobalPose(10.0, 0.0, 0.0, 10.0))
		self.assertEqual(ev.d, math.inf)
		self.assertAlmostEqual(ev.h_l, 1.85, places=15)
		self.assertAlmostEqual(ev.h_r, 1.85, places=15)


if __name__ == '__main__':
	unittest.main()
