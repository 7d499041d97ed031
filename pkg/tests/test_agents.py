"""Agent-model behavior: dynamics, control recovery, Boltzmann policy limits."""

import math

import numpy as np
import pytest

from gridcast.agents import (
    ControlAction,
    ControlSet,
    EmptyControlSetError,
    HumanState,
    QFunction,
    RobotControl,
    RobotLimits,
    RobotState,
    boltzmann_policy,
    human_step,
    q_default,
    q_goal_progress,
    recover_control,
    robot_step,
    wrap_angle,
)
from oracles import softmax_direct


class TestHumanStep:
    def test_axis_aligned(self):
        z = human_step(HumanState(0, 0), ControlAction(1.0, 0.0), 0.5)
        assert (z.x, z.y) == (0.5, 0.0)

    def test_zero_speed_fixed_point(self):
        z = human_step(HumanState(1, 1), ControlAction(0.0, 2.3), 0.5)
        assert (z.x, z.y) == (1.0, 1.0)

    def test_orthogonal_axis(self):
        z = human_step(HumanState(0, 0), ControlAction(1.0, math.pi / 2), 1.0)
        assert abs(z.x) < 1e-15
        assert z.y == pytest.approx(1.0, abs=1e-12)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, y, cx, cy = rng.uniform(-5, 5, 4)
            u = ControlAction(rng.uniform(0, 2), rng.uniform(-np.pi, np.pi))
            a = human_step(HumanState(x + cx, y + cy), u, 0.3)
            b = human_step(HumanState(x, y), u, 0.3)
            assert a.x == pytest.approx(b.x + cx, abs=1e-12)
            assert a.y == pytest.approx(b.y + cy, abs=1e-12)


class TestRecoverControl:
    def test_inverse_of_step(self):
        u = recover_control(HumanState(0, 0), HumanState(0.5, 0), 0.5, fallback_theta=0.0)
        assert u.v == pytest.approx(1.0)
        assert u.theta == pytest.approx(0.0)

    def test_stationary_uses_fallback(self):
        u = recover_control(HumanState(2, 2), HumanState(2, 2), 0.5, fallback_theta=1.1)
        assert u.v == 0.0
        assert u.theta == pytest.approx(1.1)

    def test_round_trip_property(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            z = HumanState(*rng.uniform(-3, 3, 2))
            u = ControlAction(rng.uniform(0.1, 2.0), rng.uniform(-np.pi, np.pi - 1e-9))
            dt = rng.uniform(0.05, 1.0)
            rec = recover_control(z, human_step(z, u, dt), dt, fallback_theta=0.0)
            assert rec.v == pytest.approx(u.v, abs=1e-9)
            assert rec.theta == pytest.approx(u.theta, abs=1e-9)


class TestQDefault:
    def test_at_goal_zero_action(self):
        q = q_default()
        assert q.value(HumanState(1, 2), ControlAction(0, 0), (1, 2)) == 0.0

    def test_unit_distance_unit_speed(self):
        q = q_default()
        assert q.value(HumanState(0, 0), ControlAction(1, 0), (1, 0)) == -2.0

    def test_two_meters(self):
        q = q_default()
        assert q.value(HumanState(0, 0), ControlAction(0, 0), (0, 2)) == -4.0


class TestQGoalProgress:
    def test_moves_toward_goal_scores_higher(self):
        q = q_goal_progress(0.5)
        toward = q.value(HumanState(0, 0), ControlAction(1.0, 0.0), (3, 0))
        away = q.value(HumanState(0, 0), ControlAction(1.0, -math.pi), (3, 0))
        assert toward > away

    def test_matches_successor_distance(self):
        q = q_goal_progress(1.0)
        # z' = (1, 0), goal (2, 0): -(1)^2 = -1
        assert q.value(HumanState(0, 0), ControlAction(1.0, 0.0), (2.0, 0.0)) == pytest.approx(-1.0)


class TestBoltzmannPolicy:
    def _simple_setup(self):
        actions = [ControlAction(v, th) for v in (0.0, 1.0) for th in (0.0, math.pi / 2)]
        return ControlSet(actions)

    def test_small_beta_is_uniform(self):
        control_set = self._simple_setup()
        q = q_goal_progress(0.5)
        p = boltzmann_policy(HumanState(0, 0), 1e-12, (2, 1), control_set, q)
        np.testing.assert_allclose(p, 1.0 / len(control_set), atol=1e-9)

    def test_equal_q_equal_probability(self):
        control_set = self._simple_setup()
        q = QFunction(base=lambda xy, g, v, th: np.zeros((len(xy), len(v))))
        p = boltzmann_policy(HumanState(0, 0), 3.0, (0, 0), control_set, q)
        np.testing.assert_allclose(p, 0.25, atol=1e-12)

    def test_matches_direct_summation(self):
        q_values = [0.0, -1.0, -2.0, -3.0]
        control_set = self._simple_setup()
        q = QFunction(base=lambda xy, g, v, th: np.tile(q_values, (len(xy), 1)))
        p = boltzmann_policy(HumanState(0, 0), 1.0, (0, 0), control_set, q)
        expected = softmax_direct(1.0, q_values)
        np.testing.assert_allclose(p, expected, atol=1e-12)

    def test_valid_distribution_across_beta_range(self):
        control_set = self._simple_setup()
        rng = np.random.default_rng(3)
        table = rng.uniform(-5, 0, (1, len(control_set)))
        q = QFunction(base=lambda xy, g, v, th: np.tile(table, (len(xy), 1)))
        for beta in (1e-12, 1e-6, 1.0, 1e3, 1e6):
            p = boltzmann_policy(HumanState(0, 0), beta, (0, 0), control_set, q)
            assert np.all(p >= 0)
            assert p.sum() == pytest.approx(1.0, abs=1e-9)

    def test_shift_invariance(self):
        control_set = self._simple_setup()
        rng = np.random.default_rng(4)
        table = rng.uniform(-3, 0, (1, len(control_set)))
        q1 = QFunction(base=lambda xy, g, v, th: np.tile(table, (len(xy), 1)))
        q2 = QFunction(base=lambda xy, g, v, th: np.tile(table + 17.5, (len(xy), 1)))
        p1 = boltzmann_policy(HumanState(0, 0), 2.0, (0, 0), control_set, q1)
        p2 = boltzmann_policy(HumanState(0, 0), 2.0, (0, 0), control_set, q2)
        np.testing.assert_allclose(p1, p2, atol=1e-9)

    def test_argmax_probability_nondecreasing_in_beta(self):
        control_set = self._simple_setup()
        rng = np.random.default_rng(5)
        for _ in range(20):
            table = rng.uniform(-4, 0, (1, len(control_set)))
            q = QFunction(base=lambda xy, g, v, th, t=table: np.tile(t, (len(xy), 1)))
            best = int(np.argmax(table))
            probs = [
                boltzmann_policy(HumanState(0, 0), b, (0, 0), control_set, q)[best]
                for b in (0.1, 1.0, 10.0, 100.0)
            ]
            assert all(b >= a - 1e-12 for a, b in zip(probs, probs[1:]))

    def test_all_masked_raises(self):
        control_set = self._simple_setup()
        q = QFunction(
            base=lambda xy, g, v, th: np.zeros((len(xy), len(v))),
            mask=lambda v, th: np.ones(len(v), dtype=bool),
        )
        with pytest.raises(EmptyControlSetError):
            boltzmann_policy(HumanState(0, 0), 1.0, (0, 0), control_set, q)


class TestControlSet:
    def test_grid_size(self):
        control_set = ControlSet.grid(4, 24, v_max=1.4)
        assert len(control_set) == 96

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            ControlSet([ControlAction(1, 0), ControlAction(1, 0)])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ControlSet([])

    def test_nearest(self):
        control_set = ControlSet.grid(2, 4, v_max=1.0)
        idx, dist = control_set.nearest(ControlAction(0.95, 0.05))
        assert control_set[idx].v == 1.0
        assert control_set[idx].theta == pytest.approx(0.0)
        assert dist == pytest.approx(0.1, abs=1e-12)


class TestRobotStep:
    def test_straight_line(self):
        z = robot_step(RobotState(0, 0, 1, 0), RobotControl(0, 0), 1.0)
        assert (z.x, z.y, z.v, z.theta) == (1.0, 0.0, 1.0, 0.0)

    def test_pure_acceleration(self):
        z = robot_step(RobotState(0, 0, 0, 0), RobotControl(1, 0), 0.5)
        assert (z.x, z.y) == (0.0, 0.0)
        assert z.v == pytest.approx(0.5)

    def test_euler_uses_prestep_heading(self):
        z = robot_step(RobotState(0, 0, 1, 0), RobotControl(0, 0.5), 0.2)
        assert z.x == pytest.approx(0.2)
        assert z.y == pytest.approx(0.0)
        assert z.v == pytest.approx(1.0)
        assert z.theta == pytest.approx(0.1)

    def test_clamps_speed_and_inputs(self):
        lim = RobotLimits(v_max=1.1, a_max=1.0, omega_max=1.0)
        z = robot_step(RobotState(0, 0, 1.0, 0), RobotControl(50.0, -7.0), 1.0, lim)
        assert z.v == 1.1
        assert z.theta == pytest.approx(wrap_angle(-1.0))

    def test_speed_never_negative(self):
        z = robot_step(RobotState(0, 0, 0.1, 0), RobotControl(-1.0, 0), 1.0)
        assert z.v == 0.0
