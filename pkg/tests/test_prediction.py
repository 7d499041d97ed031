"""Particle prediction versus the exact enumeration oracle."""

import math

import numpy as np
import pytest

from gridcast.agents import (
    ControlAction,
    ControlSet,
    GoalSet,
    HumanState,
    RationalitySet,
    q_goal_progress,
)
from gridcast.belief import HypothesisSpace, JointBelief, init_belief
from gridcast.occupancy import GridSpec
from gridcast.prediction import (
    EnumerationCapExceeded,
    ParticleBatch,
    PredictionConfig,
    exact_predict,
    predict,
    predict_multi,
    predict_naive,
    propagate_step,
    sample_hypotheses,
    total_variation,
)


def lattice_instance():
    """10x10 unit-cell world whose actions move exactly one cell.

    Starting from a cell center, every reachable state is again a cell
    center, so the enumeration has no discretization error relative to
    the particle rollout.
    """
    spec = GridSpec(width=10, height=10, resolution=1.0)
    headings = (0.0, math.pi / 2, -math.pi / 2, -math.pi)
    actions = [ControlAction(0.0, th) for th in headings]
    actions += [ControlAction(1.0, th) for th in headings]
    control_set = ControlSet(actions)
    space = HypothesisSpace(
        RationalitySet((0.5, 2.0)),
        GoalSet(np.array([[8.5, 4.5], [0.5, 4.5]])),
    )
    q = q_goal_progress(lookahead_s=1.0)
    z0 = HumanState(4.5, 4.5)
    return z0, control_set, q, space, spec


class TestSampleHypotheses:
    def test_point_mass(self):
        b = JointBelief.from_probs([0.0, 1.0, 0.0])
        idx = sample_hypotheses(b, 500, seed=0)
        assert np.all(idx == 1)

    def test_uniform_frequencies(self):
        b = JointBelief.from_probs([0.25] * 4)
        idx = sample_hypotheses(b, 100_000, seed=1)
        freq = np.bincount(idx, minlength=4) / len(idx)
        np.testing.assert_allclose(freq, 0.25, atol=0.01)

    def test_seventy_thirty(self):
        b = JointBelief.from_probs([0.7, 0.3])
        idx = sample_hypotheses(b, 100_000, seed=2)
        freq = np.bincount(idx, minlength=2) / len(idx)
        np.testing.assert_allclose(freq, [0.7, 0.3], atol=0.01)

    def test_deterministic_per_seed(self):
        b = JointBelief.from_probs([0.5, 0.5])
        a = sample_hypotheses(b, 1000, seed=3)
        c = sample_hypotheses(b, 1000, seed=3)
        np.testing.assert_array_equal(a, c)


class TestPropagateStep:
    def test_single_action_forced(self):
        control_set = ControlSet([ControlAction(1.0, 0.0)])
        space = HypothesisSpace(RationalitySet((1.0,)), GoalSet(np.array([[5.0, 0.0]])))
        q = q_goal_progress(0.5)
        batch = ParticleBatch.duplicated(HumanState(0, 0), np.zeros(100, dtype=np.int32))
        out = propagate_step(batch, control_set, q, space, dt=0.5, seed=0)
        np.testing.assert_allclose(out.xy, [[0.5, 0.0]] * 100, atol=1e-6)
        np.testing.assert_array_equal(out.hypothesis_idx, batch.hypothesis_idx)

    def test_large_beta_takes_argmax(self):
        # Q gap of 1 between two actions at beta = 50: deviation odds under
        # exp(-50) are far below 1e-6, so every particle must take the argmax.
        control_set = ControlSet([ControlAction(1.0, 0.0), ControlAction(0.0, 0.0)])
        space = HypothesisSpace(RationalitySet((50.0,)), GoalSet(np.array([[0.0, 0.0]])))
        from gridcast.agents import QFunction

        q = QFunction(base=lambda xy, g, v, th: np.tile([0.0, -1.0], (len(xy), 1)))
        batch = ParticleBatch.duplicated(HumanState(0, 0), np.zeros(20000, dtype=np.int32))
        out = propagate_step(batch, control_set, q, space, dt=1.0, seed=4)
        np.testing.assert_allclose(out.xy[:, 0], 1.0, atol=1e-6)

    def test_one_step_matches_enumeration(self):
        z0, control_set, q, space, spec = lattice_instance()
        belief = init_belief(space)
        exact = exact_predict(z0, belief, 1, 1.0, control_set, q, space, spec)
        cfg = PredictionConfig(n=65536, steps=1, dt=1.0, smoothing_sigma=0.0, seed=5)
        mc = predict(z0, belief, cfg, control_set, q, space, spec)
        assert total_variation(mc.layers[0], exact.layers[0]) < 0.05

    def test_hypothesis_indices_immutable(self):
        z0, control_set, q, space, spec = lattice_instance()
        hyp = sample_hypotheses(init_belief(space), 4096, seed=6)
        batch = ParticleBatch.duplicated(z0, hyp)
        for step in range(3):
            batch = propagate_step(batch, control_set, q, space, 1.0, seed=6, step=step)
            np.testing.assert_array_equal(batch.hypothesis_idx, hyp)


class TestPredict:
    def test_single_action_single_step_delta(self):
        control_set = ControlSet([ControlAction(1.0, 0.0)])
        space = HypothesisSpace(RationalitySet((1.0,)), GoalSet(np.array([[5.0, 0.5]])))
        q = q_goal_progress(0.5)
        spec = GridSpec(6, 2, 1.0)
        cfg = PredictionConfig(n=256, steps=1, dt=1.0, smoothing_sigma=0.0, seed=0)
        stack = predict(HumanState(0.5, 0.5), init_belief(space), cfg, control_set, q, space, spec)
        assert stack.layers[0][0, 1] == pytest.approx(1.0)
        assert stack.layers[0].sum() == pytest.approx(1.0, abs=1e-9)

    def test_bitwise_deterministic_across_workers(self):
        z0, control_set, q, space, spec = lattice_instance()
        cfg = PredictionConfig(n=8192, steps=3, dt=1.0, smoothing_sigma=0.1, seed=11)
        stacks = [
            predict(z0, init_belief(space), cfg, control_set, q, space, spec, workers=w)
            for w in (None, 1, 2, 5)
        ]
        for s in stacks[1:]:
            np.testing.assert_array_equal(s.layers, stacks[0].layers)

    def test_mass_conserved_per_layer(self):
        z0, control_set, q, space, spec = lattice_instance()
        cfg = PredictionConfig(n=4096, steps=4, dt=1.0, smoothing_sigma=0.0, seed=12)
        stack = predict(z0, init_belief(space), cfg, control_set, q, space, spec)
        for k in range(stack.steps):
            assert stack.layers[k].sum() == pytest.approx(1.0, abs=1e-6)

    def test_smoothing_keeps_mass(self):
        z0, control_set, q, space, spec = lattice_instance()
        cfg = PredictionConfig(n=4096, steps=2, dt=1.0, smoothing_sigma=0.7, seed=13)
        stack = predict(z0, init_belief(space), cfg, control_set, q, space, spec)
        for k in range(stack.steps):
            assert stack.layers[k].sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all(stack.layers[k] >= 0)

    def test_three_step_stack_matches_enumeration(self):
        z0, control_set, q, space, spec = lattice_instance()
        belief = JointBelief.from_probs([0.35, 0.35, 0.15, 0.15])
        exact = exact_predict(z0, belief, 3, 1.0, control_set, q, space, spec)
        cfg = PredictionConfig(n=65536, steps=3, dt=1.0, smoothing_sigma=0.0, seed=14)
        mc = predict(z0, belief, cfg, control_set, q, space, spec)
        for k in range(3):
            assert total_variation(mc.layers[k], exact.layers[k]) < 0.05

    def test_monte_carlo_error_shrinks_with_n(self):
        z0, control_set, q, space, spec = lattice_instance()
        belief = init_belief(space)
        exact = exact_predict(z0, belief, 3, 1.0, control_set, q, space, spec)
        worst = {}
        for n in (1024, 8192, 65536):
            cfg = PredictionConfig(n=n, steps=3, dt=1.0, smoothing_sigma=0.0, seed=15)
            mc = predict(z0, belief, cfg, control_set, q, space, spec)
            worst[n] = max(total_variation(mc.layers[k], exact.layers[k]) for k in range(3))
        assert worst[1024] + 0.02 >= worst[8192]
        assert worst[8192] + 0.02 >= worst[65536]
        assert worst[65536] < 0.05

    def test_naive_lane_agrees_with_vectorized(self):
        z0, control_set, q, space, spec = lattice_instance()
        belief = init_belief(space)
        cfg = PredictionConfig(n=2048, steps=2, dt=1.0, smoothing_sigma=0.0, seed=16)
        fast = predict(z0, belief, cfg, control_set, q, space, spec)
        slow = predict_naive(z0, belief, cfg, control_set, q, space, spec)
        for k in range(2):
            assert total_variation(fast.layers[k], slow.layers[k]) < 0.05


class TestExactPredict:
    def test_single_hypothesis_single_action_marches(self):
        control_set = ControlSet([ControlAction(1.0, 0.0)])
        space = HypothesisSpace(RationalitySet((1.0,)), GoalSet(np.array([[9.5, 0.5]])))
        q = q_goal_progress(0.5)
        spec = GridSpec(10, 1, 1.0)
        stack = exact_predict(HumanState(0.5, 0.5), init_belief(space), 4, 1.0,
                              control_set, q, space, spec)
        for t in range(4):
            expected = np.zeros((1, 10))
            expected[0, t + 1] = 1.0
            np.testing.assert_allclose(stack.layers[t], expected, atol=1e-15)

    def test_mirror_symmetry(self):
        # Odd grid width puts the start on the flip axis; mirrored goals and
        # equal beliefs then force mirror-symmetric layers.
        _, control_set, q, _, _ = lattice_instance()
        spec = GridSpec(width=9, height=9, resolution=1.0)
        space = HypothesisSpace(
            RationalitySet((0.5, 2.0)),
            GoalSet(np.array([[7.5, 4.5], [1.5, 4.5]])),
        )
        z0 = HumanState(4.5, 4.5)
        stack = exact_predict(z0, init_belief(space), 3, 1.0, control_set, q, space, spec)
        for k in range(3):
            np.testing.assert_allclose(
                stack.layers[k], stack.layers[k][:, ::-1], atol=1e-12
            )

    def test_layers_normalized(self):
        z0, control_set, q, space, spec = lattice_instance()
        stack = exact_predict(z0, init_belief(space), 3, 1.0, control_set, q, space, spec)
        for k in range(3):
            assert abs(stack.layers[k].sum() - 1.0) < 1e-12

    def test_cap_exceeded(self):
        z0, control_set, q, space, spec = lattice_instance()
        with pytest.raises(EnumerationCapExceeded):
            exact_predict(z0, init_belief(space), 2, 1.0, control_set, q, space, spec,
                          max_table=10)


class TestPredictMulti:
    def test_single_human_identical_to_predict(self):
        z0, control_set, q, space, spec = lattice_instance()
        belief = init_belief(space)
        cfg = PredictionConfig(n=2048, steps=3, dt=1.0, smoothing_sigma=0.0, seed=21)
        merged = predict_multi([(z0, belief)], cfg, control_set, q, space, spec)
        single = predict(z0, belief, cfg, control_set, q, space, spec)
        np.testing.assert_array_equal(merged.layers, single.layers)

    def test_disjoint_supports_sum(self):
        control_set = ControlSet([ControlAction(0.0, 0.0)])
        space = HypothesisSpace(RationalitySet((1.0,)), GoalSet(np.array([[0.0, 0.0]])))
        q = q_goal_progress(0.5)
        spec = GridSpec(10, 10, 1.0)
        cfg = PredictionConfig(n=64, steps=2, dt=1.0, smoothing_sigma=0.0, seed=22)
        belief = init_belief(space)
        merged = predict_multi(
            [(HumanState(1.5, 1.5), belief), (HumanState(8.5, 8.5), belief)],
            cfg, control_set, q, space, spec,
        )
        assert merged.layers[0][1, 1] == pytest.approx(1.0)
        assert merged.layers[0][8, 8] == pytest.approx(1.0)
        assert merged.layers[0].sum() == pytest.approx(2.0)

    def test_identical_humans_idempotent(self):
        z0, control_set, q, space, spec = lattice_instance()
        belief = init_belief(space)
        cfg = PredictionConfig(n=1024, steps=2, dt=1.0, smoothing_sigma=0.0, seed=23)
        merged = predict_multi([(z0, belief), (z0, belief)], cfg, control_set, q, space, spec)
        single = predict(z0, belief, cfg, control_set, q, space, spec)
        # identical inputs share the stream, so the max-merge is exact
        np.testing.assert_array_equal(merged.layers, single.layers)
