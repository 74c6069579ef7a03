import math
import unittest

import numpy as np

from pysafelane.errors import EstimationError, ParameterDomainError
from pysafelane.objects.barriers import (
	LEFT, RIGHT, BarrierConfig, BarrierEval, lane_expansion_for_sharing, lie_terms_at)
from pysafelane.objects.road_world import RoadProfile, place_obstacle
from pysafelane.objects.safety_filter import (
	ICCBF, PHASE_LK, PHASE_OA, PHASE_PRE, PHASE_RAMP, PTSF, FilterConfig, FilterConstraint, Gains, PrescribedTime,
	assemble_and_solve_filter_qp, control_sharing_gap, esf_override, estimate_passing_time, handoff_weight,
	iccbf_condition, iccbf_margin_barrier, input_margin, post_passing_handoff, ptsf_gains, ptsf_override,
	sample_states, validate_iccbf)
from .test_base import SafeLaneTestCase, make_client, scenario_a_obstacle, scenario_a_road


def clamp_oracle(u_nominal, constraints, u_max=None):
	"""Closed form of the scalar projection: each constraint is a bound on w."""
	lo, hi = -math.inf, math.inf
	for c in constraints:
		if c.b > 0:
			lo = max(lo, -c.a / c.b)
		else:
			hi = min(hi, -c.a / c.b)
	if u_max is not None:
		lo, hi = max(lo, -u_max), min(hi, u_max)
	if lo > hi:
		return None
	return min(max(u_nominal, lo), hi)


def state_at(road, s, e1=0.0, e1_dot=0.0, e2=0.0, e2_dot=0.0):
	X, Y = road.position(s)
	nx, ny = road.left_normal(s)
	return np.array([e1, e1_dot, e2, e2_dot, X + e1 * nx, Y + e1 * ny, road.heading(s)])


class TestFilterQp(SafeLaneTestCase):
	def random_constraint(self, side):
		b = self.rng.uniform(0.1, 5.0) * self.rng.choice([-1.0, 1.0])
		return FilterConstraint(side, self.rng.uniform(-1.0, 1.0), b, soft=side == LEFT)

	def test_matches_clamp_oracle(self):
		infeasible = 0
		for i in range(1000):
			constraints = [self.random_constraint(LEFT), self.random_constraint(RIGHT)]
			u_nominal = self.rng.uniform(-0.5, 0.5)
			u_max = 0.3 if i % 2 else None
			expected = clamp_oracle(u_nominal, constraints, u_max)
			decision = assemble_and_solve_filter_qp(u_nominal, constraints, u_max)
			if expected is None:
				infeasible += 1
				self.assertFalse(decision.feasible)
				continue
			self.assertTrue(decision.feasible)
			self.assertClose(decision.u_safe, expected, atol=1e-10)
		self.assertGreater(infeasible, 0)

	def test_nominal_passes_through_unchanged(self):
		constraints = [FilterConstraint(LEFT, 1.0, 2.0), FilterConstraint(RIGHT, 1.0, -2.0)]
		u_nominal = 0.123456789012345
		decision = assemble_and_solve_filter_qp(u_nominal, constraints)
		self.assertEqual(decision.u_safe, u_nominal)
		self.assertFalse(decision.active_l or decision.active_r)
		self.assertEqual(decision.u_override_l, -0.5)
		self.assertEqual(decision.u_override_r, 0.5)

	def test_active_side_is_flagged(self):
		# w <= 0.1 from the right barrier
		decision = assemble_and_solve_filter_qp(0.4, [FilterConstraint(RIGHT, 0.1, -1.0)])
		self.assertAlmostEqual(decision.u_safe, 0.1, places=9)
		self.assertTrue(decision.active_r)
		self.assertFalse(decision.active_l)

	def test_singular_constraint_is_dropped(self):
		decision = assemble_and_solve_filter_qp(0.2, [FilterConstraint(LEFT, -1.0, 1e-9)])
		self.assertEqual(decision.singular, 1)
		self.assertEqual(decision.u_safe, 0.2)
		self.assertTrue(math.isnan(decision.u_override_l))

	def test_infeasible_relaxes_soft_side(self):
		# soft w >= 2 against hard w <= 1
		constraints = [FilterConstraint(LEFT, -2.0, 1.0, soft=True), FilterConstraint(RIGHT, 1.0, -1.0)]
		decision = assemble_and_solve_filter_qp(0.0, constraints)
		self.assertFalse(decision.feasible)
		self.assertAlmostEqual(decision.u_safe, 1.0, places=5)
		self.assertAlmostEqual(decision.slack, 1.0, places=5)


class TestPrescribedTime(SafeLaneTestCase):
	def test_schedule(self):
		pt = PrescribedTime(t_obs=2.0, T=4.0)
		self.assertEqual(pt.t_pass, 6.0)
		self.assertEqual(pt.mu2(2.0), 1.0)
		self.assertAlmostEqual(pt.mu2(4.0), 4.0, places=12)
		self.assertAlmostEqual(pt.mu2_dot(4.0), 2.0 / 4.0 * 8.0, places=12)
		self.assertAlmostEqual(pt.mu2_ddot(4.0), 6.0 / 16.0 * 16.0, places=12)
		for t in (1.9, 6.0, 7.0):
			with self.assertRaises(ParameterDomainError):
				pt.mu2(t)
		with self.assertRaises(ParameterDomainError):
			PrescribedTime(t_obs=0.0, T=0.0)

	def test_mu_derivative_matches_finite_differences(self):
		pt = PrescribedTime(t_obs=0.0, T=3.0)
		for t in (0.1, 1.0, 2.5):
			fd = (pt.mu2(t + 1e-6) - pt.mu2(t - 1e-6)) / 2e-6
			self.assertClose(pt.mu2_dot(t), fd, rtol=1e-6)

	def test_gains_are_capped(self):
		pt = PrescribedTime(t_obs=0.0, T=1.0)
		gains = ptsf_gains(pt, 2.0, 3.0, 0.5, mu_max=1e4)
		self.assertAlmostEqual(gains.c1, 8.0, places=12)
		self.assertAlmostEqual(gains.c2, 12.0, places=12)
		self.assertGreater(gains.c1_dot, 0.0)
		capped = ptsf_gains(pt, 2.0, 3.0, 1.0 - 1e-3, mu_max=100.0)
		self.assertEqual(capped, Gains(200.0, 300.0, mu=100.0))


class TestOverridingLaws(SafeLaneTestCase):
	def setUp(self):
		self.road = scenario_a_road()
		self.obstacle = place_obstacle(self.road, 260.0, -1.0, 1.5, 40.0, allow_blocking=True)
		e_v = lane_expansion_for_sharing(3.7, self.obstacle.e_obs_l, allow_blocking=True)
		self.cfg = BarrierConfig(lane_width=3.7, e_v=e_v, obstacle=self.obstacle)
		self.samples = list(sample_states(self.road, self.obstacle, 3.7, e_v, 200, seed=11))

	def test_constant_gains_reduce_to_esf(self):
		for z, psi_dot_ref in self.samples[:50]:
			ev = lie_terms_at(z, psi_dot_ref, self.model, self.cfg)
			for side in (LEFT, RIGHT):
				u_esf = esf_override(ev, side, 15.0, 10.0)
				u_pt = ptsf_override(ev, side, Gains(15.0, 10.0))
				if u_esf is None:
					self.assertIsNone(u_pt)
				else:
					self.assertEqual(u_esf, u_pt)

	def test_control_sharing_gap(self):
		pt = PrescribedTime(t_obs=0.0, T=2.0)
		for gains in (Gains(15.0, 15.0), ptsf_gains(pt, 1.0, 1.0, 1.2)):
			for z, psi_dot_ref in self.samples:
				ev = lie_terms_at(z, psi_dot_ref, self.model, self.cfg)
				u_l, u_r = ptsf_override(ev, LEFT, gains), ptsf_override(ev, RIGHT, gains)
				if u_l is None or u_r is None:
					continue
				expected = control_sharing_gap(ev, gains, 3.7)
				self.assertClose(u_l - u_r, expected, rtol=1e-8, atol=1e-8)

	def test_singular_input_gain_returns_none(self):
		z, psi_dot_ref = self.samples[0]
		ev = lie_terms_at(z, psi_dot_ref, self.model, self.cfg)
		self.assertIsNone(esf_override(ev, LEFT, 1.0, 1.0, eps_lg=1e12))

	def test_scheduled_gain_worked_example(self):
		ev = BarrierEval(h_l=1.0, h_r=1.0, Lf_h_l=0.0, Lf_h_r=0.0, Lf2_h_l=0.0, Lf2_h_r=0.0, LgLf_h_l=-1.0,
			LgLf_h_r=1.0, phi=0.0, dphi=0.0, d=math.inf)
		gains = Gains(1.0, 1.0, c1_dot=3.0)
		self.assertEqual(ptsf_override(ev, LEFT, gains), 4.0)
		self.assertEqual(ptsf_override(ev, RIGHT, gains), -4.0)
		self.assertEqual(esf_override(ev, LEFT, 1.0, 1.0), 1.0)


class TestPassingTime(SafeLaneTestCase):
	def test_straight_road_is_distance_over_speed(self):
		road = RoadProfile.straight(500.0)
		T = estimate_passing_time(road, 100.0, 20.0, s_obs_end=200.0)
		self.assertAlmostEqual(T, 5.0, delta=1e-6)
		self.assertAlmostEqual(estimate_passing_time(road, 0.0, 10.0, d_obs_path=30.0), 3.0, delta=1e-6)

	def test_curved_road_takes_longer_than_path_over_speed(self):
		road = RoadProfile.arc(500.0, 100.0)
		T = estimate_passing_time(road, 0.0, 20.0, s_obs_end=100.0)
		self.assertGreater(T, 100.0 / 20.0)
		# chord 2 R sin(v T / 2 R) = 100 m on R = 100 m
		self.assertAlmostEqual(T, math.pi / 0.6, delta=1e-5)

	def test_gentle_arc(self):
		road = RoadProfile.arc(200.0, 1800.0)
		T = estimate_passing_time(road, 0.0, 20.0, d_obs_path=40.0)
		self.assertGreater(T, 2.0)
		self.assertLess(T, 2.0005)
		self.assertAlmostEqual(T, 3600.0 * math.asin(20.0 / 1800.0) / 20.0, delta=2e-6)

	def test_starts_from_projected_position(self):
		road = scenario_a_road()
		client = make_client(road=road, obstacle=scenario_a_obstacle(), filter_config=FilterConfig(oa_mode=PTSF))
		safety = client.new_filter()
		# the arc-length argument lags the actual pose by 5 m
		step = safety.step(0.0, state_at(road, 230.0), 0.0, 0.0, 225.0)
		self.assertTrue(step.detected)
		self.assertAlmostEqual(safety.pt.T, (261.5 - 230.0) / 20.0, delta=1e-4)

	def test_bad_inputs(self):
		road = RoadProfile.straight(50.0)
		with self.assertRaises(ParameterDomainError):
			estimate_passing_time(road, 40.0, 20.0, s_obs_end=30.0)
		with self.assertRaises(EstimationError):
			estimate_passing_time(road, 0.0, 20.0, d_obs_path=500.0)


class TestHandoff(SafeLaneTestCase):
	def test_weight(self):
		self.assertEqual(handoff_weight(-0.5), 0.0)
		self.assertEqual(handoff_weight(1.5), 1.0)
		self.assertAlmostEqual(handoff_weight(0.5), 0.5, places=15)
		xs = np.linspace(0.0, 1.0, 101)
		weights = [handoff_weight(x) for x in xs]
		self.assertTrue(all(b >= a for a, b in zip(weights, weights[1:])))
		self.assertLess(handoff_weight(1e-3), 1e-100)

	def test_weight_is_flat_at_both_ends(self):
		for h in (1e-2, 1e-3, 1e-4):
			self.assertLessEqual(abs(handoff_weight(h) - handoff_weight(0.0)) / h, 1e-6)
			self.assertLessEqual(abs(handoff_weight(h) - handoff_weight(-h)) / (2.0 * h), 1e-6)
			self.assertLessEqual(abs(handoff_weight(1.0) - handoff_weight(1.0 - h)) / h, 1e-6)
			self.assertLessEqual(abs(handoff_weight(1.0 + h) - handoff_weight(1.0 - h)) / (2.0 * h), 1e-6)

	def test_blend(self):
		pt = PrescribedTime(t_obs=0.0, T=2.0)
		self.assertEqual(post_passing_handoff(1.0, pt, 1.0, 0.3, -0.1), 0.3)
		self.assertEqual(post_passing_handoff(3.5, pt, 1.0, 0.3, -0.1), -0.1)
		self.assertAlmostEqual(post_passing_handoff(2.5, pt, 1.0, 0.3, -0.1), 0.1, places=12)


class TestInputConstrained(SafeLaneTestCase):
	def setUp(self):
		self.road = scenario_a_road()
		self.obstacle = place_obstacle(self.road, 260.0, -1.0, 1.5, 15.0, allow_blocking=True)
		self.e_v = lane_expansion_for_sharing(3.7, self.obstacle.e_obs_l, allow_blocking=True)
		self.cfg = BarrierConfig(lane_width=3.7, e_v=self.e_v, obstacle=self.obstacle)

	def test_input_margin(self):
		self.assertAlmostEqual(input_margin(-2.0, 0.1), -0.2, places=15)
		self.assertAlmostEqual(input_margin(2.0, 0.1), -0.2, places=15)

	def test_margin_barrier_value(self):
		gains = Gains(5.0, 5.0)
		for z, psi_dot_ref in sample_states(self.road, self.obstacle, 3.7, self.e_v, 20, seed=4):
			ev = lie_terms_at(z, psi_dot_ref, self.model, self.cfg)
			terms = iccbf_margin_barrier(z, psi_dot_ref, RIGHT, self.model, self.cfg, gains, 0.05)
			side = ev.side(RIGHT)
			expected = side.Lf2_h + 10.0 * side.Lf_h + 25.0 * side.h - 0.05 * abs(side.LgLf_h)
			self.assertClose(terms.b2, expected, rtol=1e-12, atol=1e-9)
			self.assertTrue(np.isfinite([terms.Lf_b2, terms.Lg_b2]).all())
		with self.assertRaises(ParameterDomainError):
			iccbf_margin_barrier(z, psi_dot_ref, RIGHT, self.model, self.cfg, gains, 0.0)

	def test_margin_barrier_matches_its_derivatives(self):
		gains = Gains(5.0, 5.0)
		for z, psi_dot_ref in sample_states(self.road, self.obstacle, 3.7, self.e_v, 10, seed=6):
			terms = iccbf_margin_barrier(z, psi_dot_ref, RIGHT, self.model, self.cfg, gains, 0.05)
			_, b = iccbf_condition(z, psi_dot_ref, RIGHT, self.model, self.cfg, gains, 5.0, 0.05)
			self.assertEqual(terms.b2, b)

	def test_large_decay_rate_validates(self):
		gains = Gains(20.0, 20.0)
		samples = list(sample_states(self.road, self.obstacle, 3.7, self.e_v, 60, seed=21))
		c3 = 1.0
		for z, psi_dot_ref in samples:
			value, b = iccbf_condition(z, psi_dot_ref, RIGHT, self.model, self.cfg, gains, 0.0, 0.05)
			if b > 0 and value < 0:
				c3 = max(c3, 2.0 * (1.0 - value / b))
		report = validate_iccbf(samples, RIGHT, self.model, self.cfg, gains, c3, 0.05)
		self.assertGreater(report.n_considered, 0)
		self.assertGreater(report.min_value, 0.0)
		self.assertFalse(report.invalidated)
		psi_dot_ref = next(p for z, p in samples if np.array_equal(np.asarray(z, dtype=float), report.witness))
		value, _ = iccbf_condition(report.witness, psi_dot_ref, RIGHT, self.model, self.cfg, gains, c3, 0.05)
		self.assertEqual(value, report.min_value)

	def test_validation_report(self):
		samples = list(sample_states(self.road, self.obstacle, 3.7, self.e_v, 30, seed=9))
		report = validate_iccbf(samples, RIGHT, self.model, self.cfg, Gains(5.0, 5.0), 5.0, 0.05)
		self.assertEqual(report.n_samples, 30)
		self.assertLessEqual(report.n_considered, 30)
		self.assertEqual(len(report.values), report.n_considered)
		self.assertEqual(report.invalidated, report.min_value < 0)
		if report.n_considered:
			self.assertEqual(report.min_value, min(report.values))
			self.assertEqual(report.witness.shape, (7,))
		with self.assertRaises(ParameterDomainError):
			validate_iccbf(samples, RIGHT, self.model, self.cfg, Gains(5.0, 5.0), 5.0, 0.05, iterations=0)


class TestFilterConfig(SafeLaneTestCase):
	def test_validation(self):
		with self.assertRaises(ParameterDomainError):
			FilterConfig(oa_mode='bogus')
		with self.assertRaises(ParameterDomainError):
			FilterConfig(lk_mode=PTSF)
		with self.assertRaises(ParameterDomainError):
			FilterConfig(oa_mode=ICCBF)
		with self.assertRaises(ParameterDomainError):
			FilterConfig(lk_gains=(0.0, 1.0))
		with self.assertRaises(ParameterDomainError):
			FilterConfig(mu_max=1.0)
		cfg = FilterConfig(oa_mode=ICCBF, u_max=0.1)
		self.assertTrue(cfg.input_constrained)
		self.assertFalse(cfg.prescribed_time)
		self.assertTrue(FilterConfig(oa_mode=PTSF).prescribed_time)


class TestSafetyFilter(SafeLaneTestCase):
	def setUp(self):
		self.road = scenario_a_road()

	def test_phases_of_prescribed_time_run(self):
		client = make_client(road=self.road, obstacle=scenario_a_obstacle(), filter_config=FilterConfig(oa_mode=PTSF))
		safety = client.new_filter()
		first = safety.step(0.0, state_at(self.road, 200.0), 0.0, 0.0, 200.0)
		self.assertEqual(first.phase, PHASE_PRE)
		self.assertFalse(first.detected)
		self.assertIsNone(safety.t_obs)
		self.assertEqual(first.mu2, 1.0)

		detected = safety.step(1.0, state_at(self.road, 225.0), 0.0, 0.0, 225.0)
		self.assertEqual(detected.phase, PHASE_OA)
		self.assertTrue(detected.detected)
		self.assertEqual(safety.t_obs, 1.0)
		self.assertEqual(detected.mu2, 1.0)
		self.assertGreater(safety.pt.T, (260.0 + 1.5 - 225.0) / 20.0 - 1e-6)

		t_pass = safety.pt.t_pass
		later = safety.step(t_pass - 0.5 * safety.pt.T, state_at(self.road, 250.0), 0.0, 0.0, 250.0)
		self.assertAlmostEqual(later.mu2, 4.0, places=9)

		ramp = safety.step(t_pass + 0.5, state_at(self.road, 275.0), 0.0, 0.0, 275.0)
		self.assertEqual(ramp.phase, PHASE_RAMP)
		self.assertAlmostEqual(ramp.h_l, 1.85, places=9)
		self.assertAlmostEqual(ramp.h_r, 1.85, places=9)
		self.assertTrue(math.isnan(ramp.mu2))

		lk = safety.step(t_pass + 2.0, state_at(self.road, 300.0), 0.0, 0.0, 300.0)
		self.assertEqual(lk.phase, PHASE_LK)
		self.assertEqual(lk.u_applied, lk.decision.u_safe)
		self.assertTrue(lk.detected)
		self.assertTrue(math.isnan(lk.mu2))

	def test_constant_gain_filter_never_hands_off(self):
		client = make_client(road=self.road, obstacle=scenario_a_obstacle())
		safety = client.new_filter()
		safety.step(0.0, state_at(self.road, 225.0), 0.0, 0.0, 225.0)
		step = safety.step(20.0, state_at(self.road, 400.0), 0.0, 0.0, 400.0)
		self.assertIsNone(safety.pt)
		self.assertEqual(step.phase, PHASE_OA)

	def test_disabled_filter_passes_nominal(self):
		client = make_client(road=self.road, obstacle=scenario_a_obstacle(), filter_config=FilterConfig(enabled=False))
		safety = client.new_filter()
		step = safety.step(0.0, state_at(self.road, 255.0, e1=0.3), 0.0, -0.05, 255.0)
		self.assertEqual(step.u_applied, -0.05)
		self.assertTrue(step.detected)
		self.assertEqual(step.phase, PHASE_PRE)

	def test_overrides_push_away_from_obstacle(self):
		client = make_client(road=self.road, obstacle=scenario_a_obstacle())
		safety = client.new_filter()
		# drifting right towards the obstacle under a hard right steer
		z = state_at(self.road, 240.0, e1=0.5, e1_dot=-1.0, e2=-0.05)
		step = safety.step(0.0, z, 0.0, -2.0, 240.0)
		self.assertTrue(step.detected)
		self.assertTrue(step.decision.feasible)
		self.assertGreater(step.u_applied, -2.0)
		self.assertTrue(step.decision.active_r)

	def test_gain_admissibility(self):
		client = make_client(road=self.road, obstacle=scenario_a_obstacle())
		safety = client.new_filter()
		ev = lie_terms_at(state_at(self.road, 225.0), 0.0, safety.model, safety.barrier_config)
		self.assertEqual(safety.check_gain_admissibility(ev), [])
		slow = make_client(road=self.road, obstacle=scenario_a_obstacle(),
			filter_config=FilterConfig(lk_gains=(1e-6, 1.0))).new_filter()
		ev = lie_terms_at(state_at(self.road, 200.0, e1=0.5, e1_dot=1.0), 0.0, slow.model, slow.barrier_config)
		self.assertIn(LEFT, slow.check_gain_admissibility(ev))


if __name__ == '__main__':
	unittest.main()
