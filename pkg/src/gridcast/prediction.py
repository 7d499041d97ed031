"""Particle-based occupancy prediction and its exact enumeration twin.

The Monte-Carlo path duplicates the current human state into n particles,
samples one (rationality, goal) hypothesis per particle from the joint
belief, and rolls the batch forward: at each step every particle samples
an action from the Boltzmann policy of its own hypothesis and takes an
Euler step.  Hypotheses never change during a rollout (bootstrapped
belief).  After each step the batch is emplaced onto a grid and
optionally Gaussian-smoothed; the particles themselves are never
discretized between steps.

The batch is processed in fixed-size chunks, each with its own
counter-based random stream keyed by (seed, step, chunk), so results are
bitwise identical for any worker count.  A deliberately naive
per-particle implementation (predict_naive) is kept as the serial
baseline for benchmarks, and exact_predict enumerates the same process
on small instances as the correctness oracle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import rng
from .agents import ControlSet, HumanState, QFunction
from .belief import HypothesisSpace, JointBelief
from .occupancy import GridSpec, OccupancyGrid, emplace_counts, smooth_values, union_max

CHUNK = 1024  # particles per random stream; fixed so streams are layout-independent


class EnumerationCapExceeded(ValueError):
    """Instance too large for exact enumeration; use the Monte-Carlo path."""


@dataclass(frozen=True)
class ParticleBatch:
    """n particle positions with their sampled hypothesis indices."""

    xy: np.ndarray  # (n, 2) float32
    hypothesis_idx: np.ndarray  # (n,) int32

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float32)
        hyp = np.asarray(self.hypothesis_idx, dtype=np.int32)
        if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] == 0:
            raise ValueError("particle positions must form a nonempty (n, 2) array")
        if hyp.shape != (xy.shape[0],):
            raise ValueError("one hypothesis index per particle required")
        if np.any(hyp < 0):
            raise ValueError("hypothesis indices must be nonnegative")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "hypothesis_idx", hyp)

    @property
    def n(self) -> int:
        return self.xy.shape[0]

    @classmethod
    def duplicated(cls, z: HumanState, hypothesis_idx: np.ndarray) -> "ParticleBatch":
        n = len(hypothesis_idx)
        xy = np.tile(np.array([z.x, z.y], dtype=np.float32), (n, 1))
        return cls(xy, hypothesis_idx)


@dataclass(frozen=True)
class PredictionConfig:
    """Sampling configuration: particle count, horizon, step, smoothing, seed."""

    n: int = 8192
    steps: int = 6
    dt: float = 0.5
    smoothing_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.steps < 1:
            raise ValueError("need n >= 1 and steps >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing sigma must be >= 0")


@dataclass(frozen=True)
class PredictionStack:
    """T occupancy layers; layer k holds p(z at base_time + (k+1) dt)."""

    spec: GridSpec
    layers: np.ndarray  # (T, height, width)
    base_time: float
    dt: float

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=float)
        if layers.ndim != 3 or layers.shape[1:] != self.spec.shape:
            raise ValueError("layers must be (T, height, width) matching the spec")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        layers = layers.copy()
        layers.setflags(write=False)
        object.__setattr__(self, "layers", layers)

    @property
    def steps(self) -> int:
        return self.layers.shape[0]

    def grid(self, layer: int) -> OccupancyGrid:
        return OccupancyGrid(self.spec, self.layers[layer])

    def grids(self) -> list[OccupancyGrid]:
        return [self.grid(k) for k in range(self.steps)]

    def layer_index_for(self, time: float) -> int:
        """Layer whose timestamp is closest to ``time``, clamped to the horizon."""
        k = int(round((time - self.base_time) / self.dt)) - 1
        return min(max(k, 0), self.steps - 1)


def sample_hypotheses(belief: JointBelief, n: int, seed: int, prefix: tuple = ()) -> np.ndarray:
    """Draw n i.i.d. hypothesis indices from the belief (deterministic per seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cdf = np.cumsum(belief.probs())
    cdf[-1] = 1.0
    u = rng.stream(seed, *prefix, rng.HYPOTHESIS_DRAWS).random(n)
    return np.searchsorted(cdf, u, side="right").astype(np.int32)


def _action_tables(control_set: ControlSet, q: QFunction, dt: float):
    """Per-action displacement rows and the unmasked-action index map (float32)."""
    disp = control_set.displacements(dt).astype(np.float32)
    mask = q.action_mask(control_set)
    if mask is None:
        keep = np.arange(len(control_set))
    else:
        keep = np.flatnonzero(~mask)
        if len(keep) == 0:
            raise ValueError("all actions are masked")
    return disp, keep.astype(np.int64)


def _propagate_chunk(xy, hyp, betas_of, goals_of, control_set, q, disp, keep, u01):
    """Advance one chunk of particles by one step; row-local operations only."""
    goal_xy = goals_of[hyp]
    betas = betas_of[hyp]
    logits = q.policy_table(xy, goal_xy, control_set)
    if len(keep) != logits.shape[1]:
        logits = logits[:, keep]
    logits *= betas[:, None]
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits, out=logits)
    cdf = np.cumsum(weights, axis=1, out=weights)
    r = u01 * cdf[:, -1]
    picked = np.sum(cdf < r[:, None], axis=1)
    np.minimum(picked, len(keep) - 1, out=picked)
    action = keep[picked]
    return xy + disp[action]


def propagate_step(
    batch: ParticleBatch,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
    dt: float,
    seed: int,
    step: int = 0,
    workers: Optional[int] = None,
    prefix: tuple = (),
) -> ParticleBatch:
    """Sample one action per particle from its own hypothesis policy and step.

    Hypothesis indices pass through unchanged.  Output is bitwise
    deterministic for a fixed (seed, step) no matter how many workers run
    the chunks.
    """
    disp, keep = _action_tables(control_set, q, dt)
    betas_of = space.beta_of.astype(np.float32)
    goals_of = space.goal_xy_of.astype(np.float32)
    out = np.empty_like(batch.xy)
    chunks = list(rng.chunk_ranges(batch.n, CHUNK))

    def run(chunk):
        start, stop, index = chunk
        u01 = rng.stream(seed, *prefix, rng.STEP_DRAWS, step, index).random(
            stop - start, dtype=np.float32
        )
        out[start:stop] = _propagate_chunk(
            batch.xy[start:stop],
            batch.hypothesis_idx[start:stop],
            betas_of,
            goals_of,
            control_set,
            q,
            disp,
            keep,
            u01,
        )

    if workers is not None and workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))
    else:
        for chunk in chunks:
            run(chunk)
    return ParticleBatch(out, batch.hypothesis_idx)


def _as_state(z_history) -> HumanState:
    if isinstance(z_history, HumanState):
        return z_history
    seq = list(z_history)
    if not seq:
        raise ValueError("empty state history")
    return seq[-1]


def predict(
    z_history,
    belief: JointBelief,
    cfg: PredictionConfig,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
    grid_spec: GridSpec,
    workers: Optional[int] = None,
    base_time: float = 0.0,
    prefix: tuple = (),
) -> PredictionStack:
    """Monte-Carlo occupancy prediction over cfg.steps future steps.

    Hypotheses are sampled once, then the batch is propagated step by
    step; after each step the particles are emplaced onto a fresh grid and
    smoothed.  Per-layer mass is 1 (out-of-bounds particles clamp to the
    boundary).
    """
    z0 = _as_state(z_history)
    hyp = sample_hypotheses(belief, cfg.n, cfg.seed, prefix=prefix)
    batch = ParticleBatch.duplicated(z0, hyp)
    layers = np.empty((cfg.steps, grid_spec.height, grid_spec.width))
    for t in range(1, cfg.steps + 1):
        batch = propagate_step(
            batch, control_set, q, space, cfg.dt, cfg.seed, step=t, workers=workers,
            prefix=prefix,
        )
        values = emplace_counts(batch.xy, grid_spec) / cfg.n
        if cfg.smoothing_sigma > 0:
            values = smooth_values(values, grid_spec, cfg.smoothing_sigma)
        layers[t - 1] = values
    return PredictionStack(grid_spec, layers, base_time, cfg.dt)


def predict_naive(
    z_history,
    belief: JointBelief,
    cfg: PredictionConfig,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
    grid_spec: GridSpec,
    base_time: float = 0.0,
) -> PredictionStack:
    """Plain per-particle implementation of the same prediction loop.

    One particle at a time, straight from the definitions.  This is the
    serial reference the benchmark compares against; the chunk-keyed
    random streams match the vectorized path's layout.
    """
    z0 = _as_state(z_history)
    hyp = sample_hypotheses(belief, cfg.n, cfg.seed)
    xy = np.tile(np.array([z0.x, z0.y], dtype=float), (cfg.n, 1))
    betas_of = space.beta_of
    goals_of = space.goal_xy_of
    disp = control_set.displacements(cfg.dt)
    mask = q.action_mask(control_set)
    keep = np.arange(len(control_set)) if mask is None else np.flatnonzero(~mask)

    layers = np.empty((cfg.steps, grid_spec.height, grid_spec.width))
    for t in range(1, cfg.steps + 1):
        for start, stop, index in rng.chunk_ranges(cfg.n, CHUNK):
            u01 = rng.stream(cfg.seed, rng.STEP_DRAWS, t, index).random(stop - start)
            for i in range(start, stop):
                h = hyp[i]
                qt = q.table(xy[i : i + 1], goals_of[h : h + 1], control_set)[0, keep]
                logits = betas_of[h] * qt
                logits -= logits.max()
                weights = np.exp(logits)
                cdf = np.cumsum(weights)
                j = min(int(np.sum(cdf < u01[i - start] * cdf[-1])), len(keep) - 1)
                xy[i] += disp[keep[j]]
        values = emplace_counts(xy, grid_spec) / cfg.n
        if cfg.smoothing_sigma > 0:
            values = smooth_values(values, grid_spec, cfg.smoothing_sigma)
        layers[t - 1] = values
    return PredictionStack(grid_spec, layers, base_time, cfg.dt)


def exact_predict(
    z_t: HumanState,
    belief: JointBelief,
    steps: int,
    dt: float,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
    grid_spec: GridSpec,
    max_table: int = 2_000_000,
    base_time: float = 0.0,
) -> PredictionStack:
    """Exact occupancy layers by enumerating the bootstrapped process.

    Tracks one conditional cell distribution per hypothesis (the
    hypothesis is frozen for the whole horizon, exactly like the particle
    rollout) and marginalizes against the fixed belief when emitting each
    layer.  The first transition starts from the continuous state; later
    ones start from cell centers.  Each layer sums to 1 exactly.

    Raises EnumerationCapExceeded when cells * |U| * |B||G| exceeds
    ``max_table``; large instances belong to the Monte-Carlo path.
    """
    cells = grid_spec.width * grid_spec.height
    n_hyp = space.size
    m = len(control_set)
    if cells * m * n_hyp > max_table:
        raise EnumerationCapExceeded(
            f"{cells} cells x {m} actions x {n_hyp} hypotheses exceeds cap "
            f"{max_table}; use the Monte-Carlo predictor"
        )
    if len(belief) != n_hyp:
        raise ValueError("belief size does not match hypothesis space")

    from .agents import policy_log_table

    disp = control_set.displacements(dt)
    b = belief.probs()

    # Transition tables from every cell center, shared across hypotheses.
    centers = grid_spec.all_centers()
    landing = np.empty((cells, m), dtype=np.int64)
    for j in range(m):
        ix, iy = grid_spec.cells_of(centers + disp[j], clamp=True)
        landing[:, j] = iy * grid_spec.width + ix
    pi = np.empty((n_hyp, cells, m))
    for h in range(n_hyp):
        goal = np.tile(space.goal_xy_of[h], (cells, 1))
        betas = np.full(cells, space.beta_of[h])
        pi[h] = np.exp(policy_log_table(centers, goal, betas, control_set, q))

    # First step from the continuous start state.
    z0 = np.array([[z_t.x, z_t.y]])
    ix0, iy0 = grid_spec.cells_of(z0 + disp, clamp=True)
    landing0 = iy0 * grid_spec.width + ix0
    goal0 = space.goal_xy_of
    pi0 = np.exp(
        policy_log_table(np.tile(z0, (n_hyp, 1)), goal0, space.beta_of, control_set, q)
    )

    p_h = np.zeros((n_hyp, cells))
    for h in range(n_hyp):
        np.add.at(p_h[h], landing0, pi0[h])

    layers = np.empty((steps, grid_spec.height, grid_spec.width))
    layers[0] = (b @ p_h).reshape(grid_spec.shape)
    flat_landing = landing.ravel()
    for t in range(1, steps):
        nxt = np.zeros_like(p_h)
        for h in range(n_hyp):
            contrib = (p_h[h][:, None] * pi[h]).ravel()
            np.add.at(nxt[h], flat_landing, contrib)
        p_h = nxt
        layers[t] = (b @ p_h).reshape(grid_spec.shape)
    return PredictionStack(grid_spec, layers, base_time, dt)


def predict_multi(
    humans: Sequence[tuple],
    cfg: PredictionConfig,
    control_set: ControlSet,
    q: QFunction,
    space: HypothesisSpace,
    grid_spec: GridSpec,
    workers: Optional[int] = None,
    base_time: float = 0.0,
) -> PredictionStack:
    """Sequential per-human prediction merged layer-wise by pointwise max.

    ``humans`` is a sequence of (z_history, belief) pairs sharing one
    configuration, including the random seed: identical humans produce
    identical stacks, so merging them is exactly idempotent.  The merged
    layers are occupancy fields in [0, 1] and are not normalized.
    """
    if not humans:
        raise ValueError("need at least one human")
    stacks = [
        predict(
            history, b, cfg, control_set, q, space, grid_spec,
            workers=workers, base_time=base_time,
        )
        for history, b in humans
    ]
    merged = np.empty((cfg.steps, grid_spec.height, grid_spec.width))
    for k in range(cfg.steps):
        merged[k] = union_max([s.grid(k) for s in stacks]).values
    return PredictionStack(grid_spec, merged, base_time, cfg.dt)


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    """Total variation distance between two occupancy layers."""
    return 0.5 * float(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)).sum())
