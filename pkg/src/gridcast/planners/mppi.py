"""Sampling-based local controller (path-integral style).

Perturbs a nominal control sequence with Gaussian noise, rolls the
Dubins dynamics out for every perturbed sequence, scores the rollouts
with a quadratic goal cost plus the time-varying collision penalty, and
averages the perturbations with exponential weights
exp(-(S - min S) / tau).  Rollouts are processed in fixed chunks with
counter-based noise streams, so results are reproducible for any worker
count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import rng
from ..agents import DEFAULT_ROBOT_LIMITS, RobotLimits, RobotState, robot_step_batch
from ..prediction import PredictionStack
from ..occupancy import collision_field

ROLLOUT_CHUNK = 256


class DegenerateRolloutError(RuntimeError):
    """Every rollout cost came out non-finite."""


@dataclass(frozen=True)
class MppiConfig:
    """Horizon, sampling and cost weights for the controller."""

    horizon: int = 40
    rollouts: int = 512
    dt: float = 0.1
    temperature: float = 1.0
    perturbation_std: tuple[float, float] = (0.5, 0.3)
    q_weights: tuple[float, float, float, float] = (3.0, 3.0, 10.0, 0.0)
    q_final_weights: Optional[tuple[float, float, float, float]] = None  # default Q/5
    r_weights: tuple[float, float] = (2.0, 1.0)
    collision_threshold: float = 0.1
    collision_penalty: float = 1000.0
    robot_radius: float = 0.25
    quadratic_control_cost: bool = False
    seed: int = 0
    limits: RobotLimits = field(default_factory=lambda: DEFAULT_ROBOT_LIMITS)

    def __post_init__(self):
        if self.horizon < 1 or self.rollouts < 1:
            raise ValueError("horizon and rollout count must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if any(s <= 0 for s in self.perturbation_std):
            raise ValueError("perturbation stds must be > 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    @property
    def q_final(self) -> np.ndarray:
        if self.q_final_weights is not None:
            return np.asarray(self.q_final_weights, dtype=float)
        return np.asarray(self.q_weights, dtype=float) / 5.0


@dataclass
class Rollout:
    """One perturbed candidate: states, perturbed controls, trajectory cost."""

    states: np.ndarray  # (K+1, 4)
    controls: np.ndarray  # (K, 2)
    cost: float


@dataclass
class MppiDiagnostics:
    """Per-call statistics used by regression tests and the run log."""

    best_cost: float
    mean_cost: float
    costs: np.ndarray
    weight_entropy: float


def _collision_stack(stack: Optional[PredictionStack], cfg: MppiConfig):
    if stack is None or stack.steps == 0:
        return None
    fields = np.stack(
        [collision_field(stack.grid(k), cfg.robot_radius) for k in range(stack.steps)],
        axis=0,
    )
    return fields >= cfg.collision_threshold


def _state_cost(states: np.ndarray, goal: np.ndarray, qdiag: np.ndarray) -> np.ndarray:
    d = states - goal[None, :]
    d[:, 3] = (d[:, 3] + np.pi) % (2.0 * np.pi) - np.pi
    return (d * d) @ qdiag


def mppi_cost(
    z: RobotState,
    u,
    t_index: int,
    goal: RobotState,
    stack: Optional[PredictionStack],
    cfg: MppiConfig,
    base_time: float = 0.0,
) -> float:
    """Pointwise trajectory cost at one horizon index.

    For t_index < horizon this is the running cost: quadratic state error
    (diagonal Q), the control term R.u (or quadratic when configured),
    the collision indicator penalty at the prediction layer covering this
    index, plus the planning-interval term.  At t_index == horizon only
    the terminal quadratic (Q_final) applies.
    """
    zv = z.array
    gv = goal.array
    if t_index >= cfg.horizon:
        return float(_state_cost(zv[None, :], gv, cfg.q_final)[0])
    cost = float(_state_cost(zv[None, :], gv, np.asarray(cfg.q_weights, dtype=float))[0])
    uv = np.asarray([u.a, u.omega] if hasattr(u, "a") else u, dtype=float)
    r = np.asarray(cfg.r_weights, dtype=float)
    cost += float(uv @ (r * uv)) if cfg.quadratic_control_cost else float(r @ uv)
    cost += cfg.dt * t_index
    blocked = _collision_stack(stack, cfg)
    if blocked is not None:
        k = stack.layer_index_for(base_time + t_index * cfg.dt)
        ix, iy = stack.spec.cell_of(z.x, z.y)
        if blocked[k, iy, ix]:
            cost += cfg.collision_penalty
    return cost


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Normalized exponential weights with the max shift (min-cost shift)."""
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not np.any(finite):
        raise DegenerateRolloutError("all rollout costs are non-finite")
    shifted = costs - np.min(costs[finite])
    w = np.where(finite, np.exp(-shifted / temperature), 0.0)
    return w / w.sum()


def mppi_step(
    z: RobotState,
    nominal: np.ndarray,
    goal: RobotState,
    stack: Optional[PredictionStack],
    cfg: MppiConfig,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    base_time: float = 0.0,
    static_blocked: Optional[np.ndarray] = None,
    static_spec=None,
) -> tuple[np.ndarray, MppiDiagnostics]:
    """One control-sequence update from N perturbed rollouts.

    Returns the (K, 2) optimal control sequence, clamped to the robot
    bounds after the weighted averaging, plus diagnostics.  Deterministic
    for a fixed seed regardless of worker count.  ``static_blocked`` is
    an optional (height, width) boolean field of permanently penalized
    cells (walls); it needs ``static_spec`` when no stack is given.
    """
    seed = cfg.seed if seed is None else seed
    nominal = np.asarray(nominal, dtype=float)
    if nominal.shape != (cfg.horizon, 2):
        raise ValueError(f"nominal sequence must be ({cfg.horizon}, 2)")
    K, N = cfg.horizon, cfg.rollouts
    std = np.asarray(cfg.perturbation_std, dtype=float)
    qdiag = np.asarray(cfg.q_weights, dtype=float)
    rvec = np.asarray(cfg.r_weights, dtype=float)
    gv = goal.array
    blocked = _collision_stack(stack, cfg)
    spec = stack.spec if stack is not None else static_spec
    if blocked is not None and static_blocked is not None:
        blocked = blocked | static_blocked[None, :, :]
    elif blocked is None and static_blocked is not None:
        if spec is None:
            raise ValueError("static_blocked without a stack needs static_spec")
        blocked = static_blocked[None, :, :]
    if blocked is not None:
        if stack is not None:
            layer_of = np.array(
                [stack.layer_index_for(base_time + (t + 1) * cfg.dt) for t in range(K)]
            )
        else:
            layer_of = np.zeros(K, dtype=int)

    noise = np.empty((N, K, 2))
    costs = np.empty(N)

    def run(chunk):
        # Rollout cost is the literal composition
        #   S = sum_{t=1}^{K-1} mppi_cost(z_t, u_{t-1}, t) + mppi_cost(z_K, ., K)
        # where z_t is the state produced by the perturbed control u_{t-1}.
        start, stop, index = chunk
        delta = rng.stream(seed, rng.MPPI_NOISE, index).normal(
            0.0, 1.0, size=(stop - start, K, 2)
        ) * std[None, None, :]
        noise[start:stop] = delta
        states = np.tile(z.array, (stop - start, 1))
        c = np.zeros(stop - start)
        for t in range(K):
            u_t = nominal[t][None, :] + delta[:, t, :]
            states = robot_step_batch(states, u_t, cfg.dt, cfg.limits)
            if t + 1 < K:
                c += _state_cost(states, gv, qdiag)
                c += cfg.dt * (t + 1)
                if cfg.quadratic_control_cost:
                    c += (u_t * u_t) @ rvec
                else:
                    c += u_t @ rvec
                if blocked is not None:
                    ix, iy = spec.cells_of(states[:, :2], clamp=True)
                    c += cfg.collision_penalty * blocked[layer_of[t], iy, ix]
        c += _state_cost(states, gv, cfg.q_final)
        costs[start:stop] = c

    chunks = list(rng.chunk_ranges(N, ROLLOUT_CHUNK))
    if workers is not None and workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))
    else:
        for chunk in chunks:
            run(chunk)

    w = mppi_weights(costs, cfg.temperature)
    controls = nominal + np.tensordot(w, noise, axes=1)
    controls[:, 0] = np.clip(controls[:, 0], -cfg.limits.a_max, cfg.limits.a_max)
    controls[:, 1] = np.clip(controls[:, 1], -cfg.limits.omega_max, cfg.limits.omega_max)
    w_pos = w[w > 0]
    diag = MppiDiagnostics(
        best_cost=float(np.min(costs)),
        mean_cost=float(np.mean(costs[np.isfinite(costs)])),
        costs=costs,
        weight_entropy=float(-(w_pos * np.log(w_pos)).sum()),
    )
    return controls, diag


def shift_nominal(controls: np.ndarray) -> np.ndarray:
    """Warm start for the next replan: drop the executed first control."""
    out = np.roll(controls, -1, axis=0)
    out[-1] = controls[-1]
    return out
