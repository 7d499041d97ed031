"""Agent models: human kinematics, noisy-rational policy, robot dynamics.

Humans are 2D kinematic points steered by (speed, heading) actions drawn
from a finite bounded set; action preferences follow a Boltzmann
distribution over a state-control utility.  The robot is a 4D Dubins car
under (acceleration, steering-rate) control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

EPS_STATIONARY = 1e-6  # meters; below this two observations count as "did not move"


class EmptyControlSetError(ValueError):
    """Raised when every action of a control set is masked out."""


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    return float((theta + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class HumanState:
    """Planar human position in meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite human state ({self.x}, {self.y})")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class ControlAction:
    """Human control: movement speed (m/s) and heading (rad, normalized)."""

    v: float
    theta: float

    def __post_init__(self):
        if not math.isfinite(self.v) or self.v < 0.0:
            raise ValueError(f"speed must be finite and >= 0, got {self.v}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def norm_sq(self) -> float:
        return self.v * self.v + self.theta * self.theta


class ControlSet:
    """Ordered finite set of human control actions.

    Stores the actions as an (m, 2) array of (v, theta) rows.  The set is
    immutable; helpers expose per-action speeds/headings, Euler-step
    displacements and nearest-action snapping for control recovery.
    """

    def __init__(self, actions: Sequence[ControlAction]):
        if len(actions) == 0:
            raise ValueError("control set must be nonempty")
        arr = np.array([[a.v, a.theta] for a in actions], dtype=float)
        if len(np.unique(arr, axis=0)) != len(arr):
            raise ValueError("control set contains duplicate actions")
        self._arr = arr
        self._arr.setflags(write=False)

    @classmethod
    def grid(cls, n_speeds: int = 4, n_headings: int = 24, v_max: float = 1.4) -> "ControlSet":
        """Cartesian product of evenly spaced speed levels and headings."""
        if n_speeds < 1 or n_headings < 1 or v_max <= 0:
            raise ValueError("grid control set needs n_speeds, n_headings >= 1 and v_max > 0")
        speeds = np.linspace(0.0, v_max, n_speeds)
        headings = -np.pi + 2.0 * np.pi * np.arange(n_headings) / n_headings
        actions = [ControlAction(float(v), float(th)) for v in speeds for th in headings]
        return cls(actions)

    def __len__(self) -> int:
        return len(self._arr)

    def __getitem__(self, i: int) -> ControlAction:
        v, th = self._arr[i]
        return ControlAction(float(v), float(th))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def v(self) -> np.ndarray:
        return self._arr[:, 0]

    @property
    def theta(self) -> np.ndarray:
        return self._arr[:, 1]

    def displacements(self, dt: float) -> np.ndarray:
        """(m, 2) Euler displacements (v cos(theta) dt, v sin(theta) dt)."""
        return np.stack(
            [self.v * np.cos(self.theta) * dt, self.v * np.sin(self.theta) * dt], axis=1
        )

    def nearest(self, u: ControlAction) -> tuple[int, float]:
        """Index and distance of the closest action under |dv| + |wrapped dtheta|."""
        dv = np.abs(self.v - u.v)
        dth = np.abs((self.theta - u.theta + np.pi) % (2.0 * np.pi) - np.pi)
        dist = dv + dth
        idx = int(np.argmin(dist))
        return idx, float(dist[idx])

    def default_snap_tol(self) -> float:
        """Half the combined grid spacing of the set (speed gap + heading gap)."""

        def max_gap(values: np.ndarray, circular: bool) -> float:
            uniq = np.unique(values)
            if len(uniq) < 2:
                return 0.0
            gaps = np.diff(uniq)
            if circular:
                gaps = np.append(gaps, 2.0 * np.pi - (uniq[-1] - uniq[0]))
            return float(np.max(gaps))

        return 0.5 * (max_gap(self.v, False) + max_gap(self.theta, True)) + 1e-9


@dataclass(frozen=True)
class GoalSet:
    """Ordered finite set of candidate goal positions (meters)."""

    positions: np.ndarray  # (k, 2)

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
            raise ValueError("goal set must be a nonempty (k, 2) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("goal positions must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "positions", arr)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class RationalitySet:
    """Ordered finite set of rationality coefficients, strictly increasing."""

    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) == 0:
            raise ValueError("rationality set must be nonempty")
        if any(b <= 0 for b in betas):
            raise ValueError("rationality coefficients must be > 0")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("rationality coefficients must be strictly increasing")
        object.__setattr__(self, "betas", betas)

    @classmethod
    def log_spaced(cls, n: int = 5, low: float = 0.1, high: float = 10.0) -> "RationalitySet":
        return cls(tuple(np.geomspace(low, high, n)))

    def __len__(self) -> int:
        return len(self.betas)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.betas, dtype=float)


@dataclass(frozen=True)
class QFunction:
    """State-control utility Q(z, u; g) with an optional action mask.

    ``base`` evaluates a batch: given particle positions ``xy`` (n, 2),
    per-particle goals ``goal_xy`` (n, 2) and action components ``v`` (m,),
    ``theta`` (m,), it returns an (n, m) utility table.  ``mask`` (if set)
    flags actions whose utility is forced to -inf, which zeroes them out
    of any Boltzmann policy.  ``base_policy`` may provide a cheaper
    variant that differs from ``base`` only by per-row constants; softmax
    shift invariance makes both induce the same policy, so samplers use
    it when present.
    """

    base: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    mask: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    base_policy: Optional[Callable] = None

    def action_mask(self, control_set: ControlSet) -> Optional[np.ndarray]:
        """Boolean (m,) array, True where the action is masked, or None."""
        if self.mask is None:
            return None
        m = np.asarray(self.mask(control_set.v, control_set.theta), dtype=bool)
        if m.shape != (len(control_set),):
            raise ValueError("mask must return one flag per action")
        return m

    def _eval(self, fn, xy, goal_xy, control_set) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy))
        goal_xy = np.atleast_2d(np.asarray(goal_xy, dtype=xy.dtype))
        v = control_set.v.astype(xy.dtype)
        theta = control_set.theta.astype(xy.dtype)
        out = np.asarray(fn(xy, goal_xy, v, theta))
        m = self.action_mask(control_set)
        if m is not None:
            out[:, m] = -np.inf
        return out

    def table(self, xy: np.ndarray, goal_xy: np.ndarray, control_set: ControlSet) -> np.ndarray:
        """(n, m) utilities; masked actions are -inf. Dtype follows ``xy``."""
        return self._eval(self.base, xy, goal_xy, control_set)

    def policy_table(self, xy, goal_xy, control_set: ControlSet) -> np.ndarray:
        """Like :meth:`table` but may drop per-row constant offsets."""
        return self._eval(self.base_policy or self.base, xy, goal_xy, control_set)

    def value(self, z: HumanState, u: ControlAction, goal_xy) -> float:
        """Scalar utility for a single (state, action, goal) triple."""
        if self.mask is not None and bool(
            np.asarray(self.mask(np.array([u.v]), np.array([u.theta])))[0]
        ):
            return -math.inf
        out = self.base(
            np.array([[z.x, z.y]]),
            np.atleast_2d(np.asarray(goal_xy, dtype=float)),
            np.array([u.v]),
            np.array([u.theta]),
        )
        return float(out[0, 0])


def q_default(weights: tuple[float, float] = (1.0, 1.0)) -> QFunction:
    """Quadratic goal-distance plus weighted control-magnitude penalty.

    Q(z, u; g) = -|z - g|^2 - (w_v v^2 + w_th theta^2).  Note the control
    penalty mixes units (speed and heading enter one squared norm); the
    weights allow rebalancing and default to (1, 1).
    """
    w_v, w_th = float(weights[0]), float(weights[1])

    def base(xy, goal_xy, v, theta):
        d2 = np.sum((xy - goal_xy) ** 2, axis=1)
        penalty = w_v * v * v + w_th * theta * theta
        return -d2[:, None] - penalty[None, :]

    return QFunction(base=base)


def q_goal_progress(lookahead_s: float = 0.5, weights: tuple[float, float] = (0.0, 0.0)) -> QFunction:
    """Utility of the state reached after holding the action for ``lookahead_s``.

    Q(z, u; g) = -|z + f(z, u) * tau - g|^2 - (w_v v^2 + w_th theta^2).
    Unlike :func:`q_default`, the goal term depends on the action, so the
    induced Boltzmann policy actually prefers goal-directed motion and the
    likelihoods separate the goal hypotheses.
    """
    tau = float(lookahead_s)
    if tau <= 0:
        raise ValueError("lookahead must be > 0")
    w_v, w_th = float(weights[0]), float(weights[1])

    def shift_free(xy, goal_xy, v, theta):
        # -|rel + s|^2 expanded as -2 rel.s - |s|^2 - |rel|^2; the cross term
        # is one (n, 2) @ (2, m) product, which keeps the hot path cheap.
        # The -|rel|^2 term is constant per row and added only in ``base``.
        step_x = v * np.cos(theta) * tau
        step_y = v * np.sin(theta) * tau
        rel = xy - goal_xy
        out = rel @ np.stack([step_x, step_y])
        out *= -2.0
        action_term = step_x * step_x + step_y * step_y
        if w_v != 0.0 or w_th != 0.0:
            action_term = action_term + (w_v * v * v + w_th * theta * theta)
        out -= action_term[None, :]
        return out

    def base(xy, goal_xy, v, theta):
        out = shift_free(xy, goal_xy, v, theta)
        rel = xy - goal_xy
        out -= np.einsum("ij,ij->i", rel, rel)[:, None]
        return out

    return QFunction(base=base, base_policy=shift_free)


def policy_log_table(
    xy: np.ndarray,
    goal_xy: np.ndarray,
    betas: np.ndarray,
    control_set: ControlSet,
    q: QFunction,
) -> np.ndarray:
    """(n, m) log-probability table of the Boltzmann policy, row-normalized.

    Row i is log pi(. | xy[i]; betas[i], goal_xy[i]).  Computed with a
    max-shifted softmax; masked actions come out at -inf.  Row operations
    only, so any partition of the rows reproduces identical values.
    """
    xy = np.atleast_2d(np.asarray(xy))
    betas = np.asarray(betas, dtype=xy.dtype).reshape(-1)
    qt = q.table(xy, goal_xy, control_set)
    logits = betas[:, None] * qt
    shift = np.max(logits, axis=1, keepdims=True)
    if np.any(np.isneginf(shift)):
        raise EmptyControlSetError("all actions are masked")
    shifted = logits - shift
    # -inf - (-inf) would be nan; masked entries must stay -inf
    shifted[~np.isfinite(logits)] = -np.inf
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return shifted - lse


def boltzmann_policy(
    z: HumanState, beta: float, goal_xy, control_set: ControlSet, q: QFunction
) -> np.ndarray:
    """Action probabilities pi(u | z; beta, g) over the control set.

    Uses a max-shifted softmax for stability; masked actions get
    probability exactly 0.  Raises EmptyControlSetError if the mask
    removes every action.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    log_p = policy_log_table(
        np.array([[z.x, z.y]], dtype=float),
        np.atleast_2d(np.asarray(goal_xy, dtype=float)),
        np.array([beta], dtype=float),
        control_set,
        q,
    )[0]
    p = np.exp(log_p)
    return p / np.sum(p)


def human_step(z: HumanState, u: ControlAction, dt: float) -> HumanState:
    """Forward-Euler step of the 2D kinematic human model."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return HumanState(z.x + u.v * math.cos(u.theta) * dt, z.y + u.v * math.sin(u.theta) * dt)


def recover_control(
    z_t: HumanState, z_next: HumanState, dt: float, fallback_theta: float
) -> ControlAction:
    """Invert the flat human dynamics: controls from two consecutive states.

    Returns v = |z_next - z_t| / dt and theta = atan2 of the displacement.
    If the displacement is below EPS_STATIONARY the heading is undefined,
    so the caller-provided fallback heading is used with v = 0.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    dx = z_next.x - z_t.x
    dy = z_next.y - z_t.y
    dist = math.hypot(dx, dy)
    if dist < EPS_STATIONARY:
        return ControlAction(0.0, fallback_theta)
    return ControlAction(dist / dt, math.atan2(dy, dx))


# ---------------------------------------------------------------------------
# Robot (4D Dubins car)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobotLimits:
    """Actuation bounds for the Dubins robot."""

    v_max: float = 1.1
    a_max: float = 1.0
    omega_max: float = 1.0


DEFAULT_ROBOT_LIMITS = RobotLimits()


@dataclass(frozen=True)
class RobotState:
    """Dubins car state: position (m), speed (m/s), heading (rad)."""

    x: float
    y: float
    v: float
    theta: float

    def __post_init__(self):
        if not all(math.isfinite(f) for f in (self.x, self.y, self.v, self.theta)):
            raise ValueError("non-finite robot state")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta], dtype=float)


@dataclass(frozen=True)
class RobotControl:
    """Robot control: acceleration (m/s^2) and steering rate (rad/s)."""

    a: float
    omega: float

    @property
    def array(self) -> np.ndarray:
        return np.array([self.a, self.omega], dtype=float)


def robot_step(
    z: RobotState, u: RobotControl, dt: float, limits: RobotLimits = DEFAULT_ROBOT_LIMITS
) -> RobotState:
    """Euler step of the Dubins car with input clamping and state saturation.

    Inputs are clamped to the actuation bounds first, the step uses the
    pre-step speed and heading, then speed is clamped to [0, v_max] and
    the heading re-wrapped so the state invariants hold unconditionally.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    a = min(max(u.a, -limits.a_max), limits.a_max)
    omega = min(max(u.omega, -limits.omega_max), limits.omega_max)
    x = z.x + z.v * math.cos(z.theta) * dt
    y = z.y + z.v * math.sin(z.theta) * dt
    v = min(max(z.v + a * dt, 0.0), limits.v_max)
    theta = wrap_angle(z.theta + omega * dt)
    return RobotState(x, y, v, theta)


def robot_step_batch(
    states: np.ndarray, controls: np.ndarray, dt: float, limits: RobotLimits
) -> np.ndarray:
    """Vectorized robot_step on (N, 4) states and (N, 2) controls."""
    a = np.clip(controls[:, 0], -limits.a_max, limits.a_max)
    omega = np.clip(controls[:, 1], -limits.omega_max, limits.omega_max)
    out = np.empty_like(states)
    out[:, 0] = states[:, 0] + states[:, 2] * np.cos(states[:, 3]) * dt
    out[:, 1] = states[:, 1] + states[:, 2] * np.sin(states[:, 3]) * dt
    out[:, 2] = np.clip(states[:, 2] + a * dt, 0.0, limits.v_max)
    out[:, 3] = (states[:, 3] + omega * dt + np.pi) % (2.0 * np.pi) - np.pi
    return out
