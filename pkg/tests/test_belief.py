"""Joint-belief maintenance: normalization, Bayesian updates, masking."""

import math

import numpy as np
import pytest
from scipy.special import logsumexp

from gridcast.agents import (
    ControlAction,
    ControlSet,
    GoalSet,
    HumanState,
    QFunction,
    RationalitySet,
    boltzmann_policy,
    human_step,
    q_goal_progress,
)
from gridcast.belief import (
    ControlSnapMismatch,
    EmptyMaskResultError,
    HypothesisSpace,
    JointBelief,
    init_belief,
    mask_stationary,
    observation_log_likelihood,
    reset_belief,
    snap_control,
    update_belief,
)


def make_space(n_betas=2, goals=((2.0, 0.0), (0.0, 2.0))):
    betas = tuple(np.geomspace(0.5, 2.0, n_betas)) if n_betas > 1 else (1.0,)
    return HypothesisSpace(RationalitySet(betas), GoalSet(np.array(goals)))


def simple_control_set():
    return ControlSet(
        [ControlAction(v, th) for v in (0.0, 1.0) for th in (0.0, math.pi / 2, -math.pi / 2, -math.pi)]
    )


class TestInitBelief:
    def test_paper_sizes(self):
        space = HypothesisSpace(
            RationalitySet(tuple(np.geomspace(0.1, 10, 5))),
            GoalSet(np.random.default_rng(0).uniform(0, 5, (10, 2))),
        )
        b = init_belief(space)
        np.testing.assert_allclose(b.probs(), 0.02, atol=1e-15)

    def test_singleton(self):
        space = HypothesisSpace(RationalitySet((1.0,)), GoalSet(np.array([[0.0, 0.0]])))
        assert init_belief(space).probs()[0] == pytest.approx(1.0)

    def test_two_by_two(self):
        b = init_belief(make_space())
        np.testing.assert_allclose(b.probs(), 0.25, atol=1e-15)


class TestResetBelief:
    def test_any_belief_to_uniform(self):
        b = JointBelief.from_probs([0.7, 0.1, 0.1, 0.1])
        np.testing.assert_allclose(reset_belief(b).probs(), 0.25, atol=1e-15)

    def test_idempotent(self):
        b = JointBelief.from_probs([0.7, 0.1, 0.1, 0.1])
        r1 = reset_belief(b)
        r2 = reset_belief(r1)
        np.testing.assert_array_equal(r1.log_weights, r2.log_weights)

    def test_normalized_after_many_updates(self):
        space = make_space()
        control_set = simple_control_set()
        q = q_goal_progress(0.5)
        b = init_belief(space)
        rng = np.random.default_rng(1)
        z = HumanState(0.0, 0.0)
        for _ in range(100):
            u = control_set[int(rng.integers(len(control_set)))]
            z2 = human_step(z, u, 0.5)
            b = update_belief(b, z, z2, 0.5, control_set, q, space)
            z = z2 if rng.random() < 0.7 else HumanState(*rng.uniform(-1, 1, 2))
        assert abs(logsumexp(reset_belief(b).log_weights)) < 1e-12


class TestUpdateBelief:
    def test_uniform_likelihood_preserves_prior(self):
        space = make_space()
        control_set = simple_control_set()
        # constant utility -> every hypothesis assigns identical likelihoods
        q = QFunction(base=lambda xy, g, v, th: np.zeros((len(xy), len(v))))
        prior = JointBelief.from_probs([0.4, 0.3, 0.2, 0.1])
        post = update_belief(prior, HumanState(0, 0), HumanState(0.5, 0), 0.5,
                             control_set, q, space)
        np.testing.assert_allclose(post.probs(), prior.probs(), atol=1e-12)

    def test_hand_computed_two_thirds_posterior(self):
        """Goal 1 masks half the actions, goal 2 none, so the observed action
        is exactly twice as likely under goal 1 for every rationality, and a
        uniform prior lands on 2/3 goal-1 mass after one update."""
        space = make_space()
        m = 8

        def base(xy, goal_xy, v, th):
            out = np.zeros((len(xy), m))
            goal1 = goal_xy[:, 0] == 2.0  # first goal of the space
            out[goal1, 4:] = -np.inf  # keep 4 of 8 actions
            return out

        q = QFunction(base=base)
        control_set = simple_control_set()
        prior = init_belief(space)
        # observed action snaps to index 1 (v=0, theta=pi/2): unmasked for both
        post = update_belief(prior, HumanState(0, 0), HumanState(0, 0), 0.5,
                             control_set, q, space, fallback_theta=math.pi / 2)
        goal_mass = space.goal_marginal(post)
        assert goal_mass[0] == pytest.approx(2.0 / 3.0, abs=1e-9)

    def test_convergence_to_true_goal(self):
        """A rational walker drives the posterior onto its goal quickly."""
        goals = tuple((3.0 * math.cos(a), 3.0 * math.sin(a))
                      for a in np.linspace(0, 2 * math.pi, 10, endpoint=False))
        space = HypothesisSpace(RationalitySet(tuple(np.geomspace(0.1, 10, 5))),
                                GoalSet(np.array(goals)))
        control_set = ControlSet.grid(4, 24, v_max=1.4)
        q = q_goal_progress(0.5)
        target = 3
        z = HumanState(0.0, 0.0)
        b = init_belief(space)
        gen = np.random.default_rng(11)
        hit = None
        for k in range(1, 11):
            probs = boltzmann_policy(z, 10.0, goals[target], control_set, q)
            j = int(np.searchsorted(np.cumsum(probs), gen.random(), side="right"))
            z2 = human_step(z, control_set[min(j, len(control_set) - 1)], 0.1)
            b = update_belief(b, z, z2, 0.1, control_set, q, space)
            z = z2
            if space.goal_marginal(b)[target] > 0.9:
                hit = k
                break
        assert hit is not None and hit <= 10

    def test_log_linear_agreement(self):
        space = make_space(n_betas=3, goals=((2.0, 0.0), (0.0, 2.0), (-2.0, -1.0)))
        control_set = simple_control_set()
        q = q_goal_progress(0.5)
        b = init_belief(space)
        rng = np.random.default_rng(2)
        z = HumanState(0.1, -0.2)
        for _ in range(100):
            u = control_set[int(rng.integers(len(control_set)))]
            z2 = human_step(z, u, 0.5)
            idx = snap_control(
                ControlAction(math.hypot(z2.x - z.x, z2.y - z.y) / 0.5,
                              math.atan2(z2.y - z.y, z2.x - z.x)) if
                math.hypot(z2.x - z.x, z2.y - z.y) > 1e-6 else ControlAction(0.0, 0.0),
                control_set,
            )
            lik = np.exp(observation_log_likelihood(z, idx, control_set, q, space))
            linear = b.probs() * lik
            linear /= linear.sum()
            b = update_belief(b, z, z2, 0.5, control_set, q, space)
            rel = np.max(np.abs(b.probs() - linear) / np.maximum(linear, 1e-300))
            assert rel < 1e-6
            assert abs(logsumexp(b.log_weights)) < 1e-9
            z = z2

    def test_posterior_invariant_to_q_shift(self):
        space = make_space()
        control_set = simple_control_set()
        rng = np.random.default_rng(8)
        table = rng.uniform(-3, 0, (1, len(control_set)))
        prior = JointBelief.from_probs(rng.dirichlet(np.ones(space.size)))

        def make_q(shift):
            return QFunction(base=lambda xy, g, v, th: np.tile(table + shift, (len(xy), 1)))

        post0 = update_belief(prior, HumanState(0, 0), HumanState(0.5, 0), 0.5,
                              control_set, make_q(0.0), space)
        post1 = update_belief(prior, HumanState(0, 0), HumanState(0.5, 0), 0.5,
                              control_set, make_q(42.0), space)
        np.testing.assert_allclose(post0.probs(), post1.probs(), atol=1e-9)

    def test_zero_prior_mass_stays_zero(self):
        space = make_space()
        control_set = simple_control_set()
        q = q_goal_progress(0.5)
        prior = JointBelief(np.array([-np.inf, 0.0, -np.inf, -np.inf]))
        post = update_belief(prior, HumanState(0, 0), HumanState(0.5, 0), 0.5,
                             control_set, q, space)
        assert post.probs()[0] == 0.0
        assert post.probs()[2] == 0.0
        assert post.probs()[1] == pytest.approx(1.0)

    def test_snap_mismatch_raises(self):
        space = make_space()
        control_set = simple_control_set()
        q = q_goal_progress(0.5)
        b = init_belief(space)
        with pytest.raises(ControlSnapMismatch):
            # implies v = 8 m/s, far beyond the set's top speed of 1
            update_belief(b, HumanState(0, 0), HumanState(4.0, 0), 0.5,
                          control_set, q, space)


class TestMaskStationary:
    def test_high_threshold_is_noop(self):
        control_set = simple_control_set()
        q = q_goal_progress(0.5)
        masked = mask_stationary(q, control_set, v_threshold=10.0)
        p0 = boltzmann_policy(HumanState(0, 0), 1.0, (1, 1), control_set, q)
        p1 = boltzmann_policy(HumanState(0, 0), 1.0, (1, 1), control_set, masked)
        np.testing.assert_allclose(p0, p1, atol=1e-12)

    def test_zero_threshold_keeps_only_stationary(self):
        control_set = simple_control_set()
        q = q_goal_progress(0.5)
        masked = mask_stationary(q, control_set, v_threshold=0.0)
        for beta in (0.1, 1.0, 50.0):
            p = boltzmann_policy(HumanState(0, 0), beta, (1, 1), control_set, masked)
            moving = control_set.v > 0.0
            assert p[moving].sum() == 0.0
            assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_restricted_softmax(self):
        control_set = simple_control_set()
        rng = np.random.default_rng(9)
        table = rng.uniform(-2, 0, (1, len(control_set)))
        q = QFunction(base=lambda xy, g, v, th: np.tile(table, (len(xy), 1)))
        masked = mask_stationary(q, control_set, v_threshold=0.5)
        p = boltzmann_policy(HumanState(0, 0), 1.7, (0, 0), control_set, masked)
        keep = control_set.v <= 0.5
        w = np.exp(1.7 * table[0, keep])
        expected = np.zeros(len(control_set))
        expected[keep] = w / w.sum()
        np.testing.assert_allclose(p, expected, atol=1e-12)

    def test_empty_mask_raises(self):
        control_set = ControlSet([ControlAction(1.0, 0.0), ControlAction(1.0, 1.0)])
        q = q_goal_progress(0.5)
        with pytest.raises(EmptyMaskResultError):
            mask_stationary(q, control_set, v_threshold=0.5)
