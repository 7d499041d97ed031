"""Joint belief over (rationality, goal) hypotheses, maintained in log space.

The belief is a normalized log-probability table over all pairs from a
RationalitySet and a GoalSet (row-major: rationality index varies
slowest).  Updates are Bayesian: the likelihood of an observed state
transition is the Boltzmann-policy probability of the recovered control,
evaluated per hypothesis, and the whole update runs in log space with a
single log-sum-exp normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .agents import (
    ControlAction,
    ControlSet,
    GoalSet,
    HumanState,
    QFunction,
    RationalitySet,
    policy_log_table,
    recover_control,
)

# Floor for finite log weights, near log of the smallest positive normal
# double.  -inf is reserved for hypotheses deliberately zeroed by the caller.
LOG_WEIGHT_FLOOR = -745.0


class ControlSnapMismatch(ValueError):
    """Observed control is farther from the control set than the snap tolerance."""


class EmptyMaskResultError(ValueError):
    """Raised when stationary masking would leave no usable action."""


@dataclass(frozen=True)
class HypothesisSpace:
    """Cartesian product of rationality coefficients and goals."""

    rationalities: RationalitySet
    goals: GoalSet

    @property
    def size(self) -> int:
        return len(self.rationalities) * len(self.goals)

    @property
    def beta_of(self) -> np.ndarray:
        """(size,) rationality coefficient of each hypothesis index."""
        return np.repeat(self.rationalities.array, len(self.goals))

    @property
    def goal_xy_of(self) -> np.ndarray:
        """(size, 2) goal position of each hypothesis index."""
        return np.tile(self.goals.positions, (len(self.rationalities), 1))

    def index_of(self, beta_index: int, goal_index: int) -> int:
        return beta_index * len(self.goals) + goal_index

    def goal_marginal(self, belief: "JointBelief") -> np.ndarray:
        """(|goals|,) posterior goal probabilities, summed over rationalities."""
        p = belief.probs().reshape(len(self.rationalities), len(self.goals))
        return p.sum(axis=0)

    def beta_marginal(self, belief: "JointBelief") -> np.ndarray:
        p = belief.probs().reshape(len(self.rationalities), len(self.goals))
        return p.sum(axis=1)


@dataclass(frozen=True)
class JointBelief:
    """Normalized log-probability table over hypothesis pairs."""

    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if lw.size == 0:
            raise ValueError("belief must cover at least one hypothesis")
        if np.any(np.isnan(lw)):
            raise ValueError("belief log weights contain NaN")
        total = logsumexp(lw)
        if abs(total) > 1e-9:
            raise ValueError(f"belief is not normalized (logsumexp={total:.3e})")
        lw = lw.copy()
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_probs(cls, probs) -> "JointBelief":
        p = np.asarray(probs, dtype=float).reshape(-1)
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        s = p.sum()
        if s <= 0:
            raise ValueError("probabilities must sum to a positive value")
        with np.errstate(divide="ignore"):
            return cls(np.log(p / s))

    def __len__(self) -> int:
        return len(self.log_weights)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights)


def init_belief(space: HypothesisSpace) -> JointBelief:
    """Uniform joint belief: every hypothesis gets 1 / (|B| |G|)."""
    n = space.size
    return JointBelief(np.full(n, -np.log(n)))


def reset_belief(belief: JointBelief) -> JointBelief:
    """Return the uniform belief of the same size (e.g. after a goal departure)."""
    n = len(belief)
    return JointBelief(np.full(n, -np.log(n)))


def snap_control(
    u: ControlAction, control_set: ControlSet, tol: Optional[float] = None
) -> int:
    """Snap a recovered continuous control to the nearest set action.

    Raises ControlSnapMismatch if the nearest action is farther than the
    tolerance (default: half the control grid spacing), which signals that
    the observation is inconsistent with the bounded control model.
    """
    tol = control_set.default_snap_tol() if tol is None else float(tol)
    idx, dist = control_set.nearest(u)
    if dist > tol:
        raise ControlSnapMismatch(
            f"observed control (v={u.v:.3f}, theta={u.theta:.3f}) is {dist:.3f} "
            f"from the nearest set action, beyond tolerance {tol:.3f}"
        )
    return idx


def observation_log_likelihood(
    z_t: HumanState,
    action_index: int,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
) -> np.ndarray:
    """(size,) log pi(u | z_t; beta, g) for every hypothesis."""
    n = space.size
    xy = np.tile(np.array([[z_t.x, z_t.y]], dtype=float), (n, 1))
    log_table = policy_log_table(xy, space.goal_xy_of, space.beta_of, control_set, q)
    return log_table[:, action_index]


def update_belief(
    belief: JointBelief,
    z_t: HumanState,
    z_next: HumanState,
    dt: float,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
    fallback_theta: float = 0.0,
    snap_tol: Optional[float] = None,
    transition: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> JointBelief:
    """One Bayesian update of the joint belief from an observed state pair.

    The control is recovered from the flat dynamics, snapped to the
    nearest set action, and its per-hypothesis policy probability
    multiplies the prior in log space; the result is renormalized with a
    single log-sum-exp.  ``transition`` is an optional hook applied to the
    prior log weights before the measurement update (identity when None);
    the update itself contains no hypothesis transition kernel.

    Hypotheses with prior mass exactly zero (log weight -inf) stay at
    zero.  All other log weights are floored at LOG_WEIGHT_FLOOR before
    normalization so finite likelihoods cannot produce -inf by underflow.
    """
    if len(belief) != space.size:
        raise ValueError("belief size does not match hypothesis space")
    u = recover_control(z_t, z_next, dt, fallback_theta)
    idx = snap_control(u, control_set, snap_tol)

    prior = belief.log_weights
    if transition is not None:
        prior = np.asarray(transition(prior), dtype=float)
    log_lik = observation_log_likelihood(z_t, idx, control_set, q, space)

    zeroed = np.isneginf(prior)
    posterior = prior + log_lik
    posterior[~zeroed] = np.maximum(posterior[~zeroed], LOG_WEIGHT_FLOOR)
    posterior[zeroed] = -np.inf
    return JointBelief(posterior - logsumexp(posterior))


def mask_stationary(
    q: QFunction, control_set: ControlSet, v_threshold: float
) -> QFunction:
    """Mask every action faster than ``v_threshold`` out of the utility.

    Masked actions evaluate to -inf, so the Boltzmann policy assigns them
    probability 0 and belief updates ignore them.  Raises if the mask
    would remove every action of ``control_set``.
    """
    if not np.any(control_set.v <= v_threshold):
        raise EmptyMaskResultError(
            f"no action with v <= {v_threshold}; masking would empty the control set"
        )
    prev = q.mask

    def mask(v: np.ndarray, theta: np.ndarray) -> np.ndarray:
        m = v > v_threshold
        if prev is not None:
            m = m | np.asarray(prev(v, theta), dtype=bool)
        return m

    return QFunction(base=q.base, mask=mask)
