"""Deterministic closed-loop world: scripted humans, observer, planner, metrics.

Humans walk between scripted goals by sampling their true Boltzmann
policy each step; on reaching a goal they dwell, then depart toward the
next goal, firing the observer-side belief-reset hook.  The observer
tracks humans at a fixed cadence, updates one joint belief per human,
predicts occupancy stacks, and the active planner (MPPI or the anytime
grid search) drives the robot.  Everything is seeded: a (scenario, seed)
pair reproduces the run log byte for byte.  Wall-clock timings are
collected separately and never enter the log.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng
from .agents import (
    ControlSet,
    GoalSet,
    HumanState,
    QFunction,
    RationalitySet,
    RobotControl,
    RobotLimits,
    RobotState,
    q_goal_progress,
    robot_step,
)
from .belief import (
    ControlSnapMismatch,
    HypothesisSpace,
    JointBelief,
    init_belief,
    mask_stationary,
    reset_belief,
    update_belief,
)
from .gridio import RunLogWriter, save_stack
from .occupancy import GridSpec, OccupancyGrid, collision_field, union_max
from .prediction import PredictionConfig, PredictionStack, predict
from .planners.anastar import Path, ana_star, track_path
from .planners.mppi import MppiConfig, mppi_step, shift_nominal

SIM_PLANNER = 6  # stream namespace for per-tick planner seeds
SIM_PREDICT = 7


class ScenarioError(ValueError):
    """Scenario config is inconsistent; the message names the offending field."""


# ---------------------------------------------------------------------------
# Scenario schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HumanSpec:
    start: tuple[float, float]
    goals: tuple  # visited cyclically
    beta_true: float = 10.0
    speed_max: float = 1.4
    radius: float = 0.3
    goal_radius: float = 0.2
    dwell_s: float = 1.0


@dataclass(frozen=True)
class RobotSpec:
    start: tuple[float, float]
    heading: float = 0.0
    goals: tuple = ()
    v_max: float = 1.1
    a_max: float = 1.0
    omega_max: float = 1.0
    radius: float = 0.25
    goal_radius: float = 0.3
    planning_margin: float = 0.55  # extra clearance added to the planning footprint

    @property
    def limits(self) -> RobotLimits:
        return RobotLimits(v_max=self.v_max, a_max=self.a_max, omega_max=self.omega_max)


@dataclass(frozen=True)
class TimingSpec:
    sim_dt: float = 0.05
    observation_hz: float = 10.0
    prediction_hz: float = 5.0
    planner_hz: float = 10.0
    time_limit_s: float = 40.0


@dataclass(frozen=True)
class ModelSpec:
    """Observer-side hypothesis space and policy model."""

    goals: tuple = ()
    betas: tuple = tuple(np.geomspace(0.1, 10.0, 5))
    control_speeds: int = 4
    control_headings: int = 24
    control_v_max: float = 1.4
    q_lookahead_s: float = 0.5
    stationary_speed: float = 0.05  # observed speed below which a human counts as stationary
    stationary_mask_v: float = 0.5  # mask prediction actions faster than this when stationary

    def control_set(self) -> ControlSet:
        return ControlSet.grid(self.control_speeds, self.control_headings, self.control_v_max)

    def hypothesis_space(self) -> HypothesisSpace:
        return HypothesisSpace(RationalitySet(self.betas), GoalSet(np.array(self.goals)))

    def q_function(self) -> QFunction:
        return q_goal_progress(self.q_lookahead_s)


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    bounds: tuple[float, float]  # room size (meters); origin at (0, 0)
    humans: tuple
    robot: RobotSpec
    timing: TimingSpec
    model: ModelSpec
    prediction: PredictionConfig
    planner: str = "mppi"  # "mppi" or "astar"
    mppi: MppiConfig = field(default_factory=MppiConfig)
    astar_time_limit_s: float = 0.1
    grid_resolution: float = 0.1
    obstacles: tuple = ()  # axis-aligned boxes (x0, y0, x1, y1)
    observation_noise_std: float = 0.0
    prediction_workers: int = 0  # 0 = single-threaded
    # Accumulate the occupancy union over time layers before planning, so a
    # cell stays blocked once any earlier layer blocks it.  Forbids plans
    # that race through a predicted crossing just ahead of the human.
    conservative_time_union: bool = True

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            width=int(round(self.bounds[0] / self.grid_resolution)),
            height=int(round(self.bounds[1] / self.grid_resolution)),
            resolution=self.grid_resolution,
        )

    def validate(self) -> None:
        w, h = self.bounds
        if w <= 0 or h <= 0:
            raise ScenarioError("bounds must be positive")

        def inside(p, where):
            if not (0.0 <= p[0] <= w and 0.0 <= p[1] <= h):
                raise ScenarioError(f"{where} = {tuple(p)} lies outside the {w} x {h} room")

        inside(self.robot.start, "robot.start")
        for i, g in enumerate(self.robot.goals):
            inside(g, f"robot.goals[{i}]")
        for i, hs in enumerate(self.humans):
            inside(hs.start, f"humans[{i}].start")
            for j, g in enumerate(hs.goals):
                inside(g, f"humans[{i}].goals[{j}]")
        for i, g in enumerate(self.model.goals):
            inside(g, f"model.goals[{i}]")
        t = self.timing
        for name in ("observation_hz", "prediction_hz", "planner_hz"):
            if getattr(t, name) <= 0:
                raise ScenarioError(f"timing.{name} must be > 0")
        if t.sim_dt <= 0 or t.time_limit_s <= 0:
            raise ScenarioError("timing.sim_dt and timing.time_limit_s must be > 0")
        for name in ("observation_hz", "prediction_hz", "planner_hz"):
            period = 1.0 / getattr(t, name)
            steps = period / t.sim_dt
            if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
                raise ScenarioError(
                    f"timing.{name} must divide the simulation rate 1/{t.sim_dt}"
                )
        if self.humans and not self.model.goals:
            raise ScenarioError("model.goals must be nonempty when humans are present")
        if self.planner not in ("mppi", "astar"):
            raise ScenarioError(f"planner must be 'mppi' or 'astar', got {self.planner!r}")


# ---------------------------------------------------------------------------
# Ground-truth world
# ---------------------------------------------------------------------------


@dataclass
class HumanSim:
    """Mutable ground-truth human: position, scripted goal pointer, dwell timer."""

    spec: HumanSpec
    state: HumanState
    goal_index: int = 0
    dwell_until: float = -1.0
    arrived: bool = False

    @property
    def goal(self) -> np.ndarray:
        return np.asarray(self.spec.goals[self.goal_index % len(self.spec.goals)], dtype=float)


@dataclass
class WorldState:
    """Snapshot of the simulated world plus the events of the last step."""

    time: float
    step_index: int
    humans: list
    robot: RobotState
    robot_control: RobotControl
    events: list = field(default_factory=list)


def make_world(scenario: Scenario) -> WorldState:
    humans = [HumanSim(spec=hs, state=HumanState(*hs.start)) for hs in scenario.humans]
    robot = RobotState(scenario.robot.start[0], scenario.robot.start[1], 0.0, scenario.robot.heading)
    return WorldState(time=0.0, step_index=0, humans=humans, robot=robot,
                      robot_control=RobotControl(0.0, 0.0))


def _true_policy_tables(scenario: Scenario):
    """Per-human control set and utility used by the scripted ground truth."""
    q = q_goal_progress(scenario.model.q_lookahead_s)
    tables = []
    for hs in scenario.humans:
        cs = ControlSet.grid(
            scenario.model.control_speeds, scenario.model.control_headings, hs.speed_max
        )
        tables.append((cs, q))
    return tables


def step_world(state: WorldState, scenario: Scenario, dt: Optional[float] = None,
               policy_tables=None) -> WorldState:
    """Advance the world one step; returns the same object, mutated.

    Humans sample their true noisy-rational policy toward their current
    goal (hold position while dwelling); whoever finishes a dwell departs
    toward the next goal and emits a ``goal_departure`` event.  The robot
    integrates the currently applied control.
    """
    from .agents import boltzmann_policy, human_step

    dt = scenario.timing.sim_dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if policy_tables is None:
        policy_tables = _true_policy_tables(scenario)
    state.events = []
    w, h = scenario.bounds
    for i, hsim in enumerate(state.humans):
        if hsim.arrived:
            if state.time >= hsim.dwell_until:
                hsim.arrived = False
                hsim.goal_index += 1
                state.events.append(("goal_departure", i))
            else:
                continue
        cs, q = policy_tables[i]
        probs = boltzmann_policy(hsim.state, hsim.spec.beta_true, hsim.goal, cs, q)
        u01 = rng.stream(scenario.seed, rng.SIM_HUMAN, i, state.step_index).random()
        j = min(int(np.searchsorted(np.cumsum(probs), u01, side="right")), len(cs) - 1)
        nxt = human_step(hsim.state, cs[j], dt)
        hsim.state = HumanState(min(max(nxt.x, 0.0), w), min(max(nxt.y, 0.0), h))
        if np.hypot(*(hsim.state.xy - hsim.goal)) <= hsim.spec.goal_radius:
            hsim.arrived = True
            hsim.dwell_until = state.time + dt + hsim.spec.dwell_s
    state.robot = robot_step(state.robot, state.robot_control, dt, scenario.robot.limits)
    state.time += dt
    state.step_index += 1
    return state


def observe(state: WorldState, scenario: Scenario, obs_index: int) -> list:
    """Per-human position samples at the observation cadence.

    Adds seeded Gaussian noise with the configured std (default 0), so
    noise-free observations equal the ground truth exactly.
    """
    out = []
    std = scenario.observation_noise_std
    for i, hsim in enumerate(state.humans):
        xy = hsim.state.xy
        if std > 0:
            noise = rng.stream(scenario.seed, rng.SIM_OBSERVE, i, obs_index).normal(0.0, std, 2)
            xy = xy + noise
        out.append((i, float(xy[0]), float(xy[1])))
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _stats(samples: list) -> dict:
    if not samples:
        return {"count": 0}
    arr = np.asarray(samples)
    return {
        "count": int(arr.size),
        "mean_s": float(arr.mean()),
        "p50_s": float(np.percentile(arr, 50)),
        "p95_s": float(np.percentile(arr, 95)),
        "max_s": float(arr.max()),
    }


@dataclass
class RunMetrics:
    """Episode summary; timing stats are reported separately from the log."""

    min_human_distance: Optional[float]
    collision_count: int
    robot_mean_speed: float
    goals_reached: int
    total_goals: int
    duration_s: float
    completed: bool
    belief_resets: int
    prediction_times: list = field(default_factory=list)
    planner_times: list = field(default_factory=list)

    def to_dict(self) -> dict:
        """Deterministic summary (no wall-clock fields)."""
        return {
            "min_human_distance_m": self.min_human_distance,
            "collision_count": self.collision_count,
            "robot_mean_speed_mps": self.robot_mean_speed,
            "goals_reached": self.goals_reached,
            "total_goals": self.total_goals,
            "duration_s": self.duration_s,
            "completed": self.completed,
            "belief_resets": self.belief_resets,
        }

    def timing_dict(self) -> dict:
        return {
            "prediction": _stats(self.prediction_times),
            "planner": _stats(self.planner_times),
        }


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------


def _static_grid(scenario: Scenario) -> OccupancyGrid:
    """Static obstacle mask: configured boxes plus a one-cell border wall."""
    spec = scenario.grid_spec()
    values = np.zeros(spec.shape)
    values[0, :] = 1.0
    values[-1, :] = 1.0
    values[:, 0] = 1.0
    values[:, -1] = 1.0
    for x0, y0, x1, y1 in scenario.obstacles:
        ix0, iy0 = spec.cell_of(x0, y0)
        ix1, iy1 = spec.cell_of(x1, y1)
        values[iy0 : iy1 + 1, ix0 : ix1 + 1] = 1.0
    return OccupancyGrid(spec, values)


@dataclass
class _Observer:
    """Belief tracking for one human."""

    belief: JointBelief
    last_xy: Optional[tuple] = None
    last_heading: float = 0.0
    stationary: bool = False


def run_episode(
    scenario: Scenario,
    log: Optional[RunLogWriter] = None,
    stack_dir=None,
    stack_log_every: int = 0,
) -> RunMetrics:
    """Run the closed loop (observe, update, predict, plan, act) to completion.

    Ends when the robot has visited its whole goal sequence or the time
    limit is hit.  With ``log`` set, typed records are appended for every
    step; ``stack_dir`` plus ``stack_log_every`` > 0 additionally exports
    every k-th merged prediction stack in the layered-grid format.
    """
    scenario.validate()
    timing = scenario.timing
    grid_spec = scenario.grid_spec()
    static = _static_grid(scenario)
    world = make_world(scenario)
    policy_tables = _true_policy_tables(scenario)
    limits = scenario.robot.limits

    n_humans = len(scenario.humans)
    if n_humans:
        space = scenario.model.hypothesis_space()
        control_set = scenario.model.control_set()
        q_model = scenario.model.q_function()
        q_masked = mask_stationary(q_model, control_set, scenario.model.stationary_mask_v)
        observers = [_Observer(belief=init_belief(space)) for _ in range(n_humans)]
    else:
        observers = []

    footprint_radius = scenario.robot.radius + (
        max(h.radius for h in scenario.humans) if n_humans else 0.0
    )
    static_blocked = collision_field(static, scenario.robot.radius) >= 0.5
    static_inflated = OccupancyGrid(static.spec, static_blocked.astype(float))
    # Collision probability for planning uses the summed footprint plus a
    # clearance margin: a grid layer holds human-center mass, so centers
    # closer than the two radii collide.
    plan_radius = footprint_radius + scenario.robot.planning_margin
    mppi_cfg = replace(scenario.mppi, robot_radius=plan_radius, limits=limits)

    obs_every = round(1.0 / (timing.observation_hz * timing.sim_dt))
    pred_every = round(1.0 / (timing.prediction_hz * timing.sim_dt))
    plan_every = round(1.0 / (timing.planner_hz * timing.sim_dt))
    n_steps = int(round(timing.time_limit_s / timing.sim_dt))

    workers = scenario.prediction_workers if scenario.prediction_workers > 0 else None
    stack: Optional[PredictionStack] = None
    nominal = np.zeros((scenario.mppi.horizon, 2))
    current_path: Optional[Path] = None
    path_t0 = 0.0

    goal_idx = 0
    goals = list(scenario.robot.goals)
    goals_reached = 0
    min_dist = math.inf if n_humans else None
    collisions = 0
    in_collision = False
    speeds = []
    resets = 0
    obs_index = 0
    pred_index = 0
    plan_index = 0
    metrics = RunMetrics(
        min_human_distance=None, collision_count=0, robot_mean_speed=0.0,
        goals_reached=0, total_goals=len(goals), duration_s=0.0, completed=False,
        belief_resets=0,
    )

    for step in range(n_steps):
        t = world.time

        # --- observe + belief updates -----------------------------------
        if n_humans and step % obs_every == 0:
            dt_obs = obs_every * timing.sim_dt
            for i, ox, oy in observe(world, scenario, obs_index):
                obs_state = HumanState(ox, oy)
                tracker = observers[i]
                if log:
                    log.observation(t, i, (ox, oy))
                if tracker.last_xy is not None:
                    prev = HumanState(*tracker.last_xy)
                    try:
                        tracker.belief = update_belief(
                            tracker.belief, prev, obs_state, dt_obs, control_set,
                            q_model, space, fallback_theta=tracker.last_heading,
                        )
                    except ControlSnapMismatch:
                        # Observation implies a control outside the bounded
                        # model; clamp onto the set and retry.
                        tracker.belief = update_belief(
                            tracker.belief, prev, obs_state, dt_obs, control_set,
                            q_model, space, fallback_theta=tracker.last_heading,
                            snap_tol=math.inf,
                        )
                        if log:
                            log.event(t, "snap_clamped", human=i)
                    moved = math.hypot(ox - prev.x, oy - prev.y)
                    tracker.stationary = moved / dt_obs < scenario.model.stationary_speed
                    if moved > 1e-9:
                        tracker.last_heading = math.atan2(oy - prev.y, ox - prev.x)
                    if log:
                        log.belief(t, i, tracker.belief)
                tracker.last_xy = (ox, oy)
            obs_index += 1

        # --- predict ------------------------------------------------------
        if n_humans and step % pred_every == 0:
            t0 = time.perf_counter()
            cfg = replace(scenario.prediction, seed=rng.derive_seed(scenario.seed, SIM_PREDICT, pred_index))
            per_human = []
            for i, tracker in enumerate(observers):
                zi = HumanState(*tracker.last_xy) if tracker.last_xy else world.humans[i].state
                qi = q_masked if tracker.stationary else q_model
                per_human.append(
                    predict(zi, tracker.belief, cfg, control_set, qi, space, grid_spec,
                            workers=workers, base_time=t, prefix=(rng.HUMAN_PREFIX, i))
                )
            layers = np.stack(
                [union_max([s.grid(k) for s in per_human]).values for k in range(cfg.steps)]
            )
            if scenario.conservative_time_union:
                np.maximum.accumulate(layers, axis=0, out=layers)
            stack = PredictionStack(grid_spec, layers, t, cfg.dt)
            metrics.prediction_times.append(time.perf_counter() - t0)
            if log:
                log.prediction(t, list(range(n_humans)), cfg.steps, cfg.dt)
            if stack_dir is not None and stack_log_every > 0 and pred_index % stack_log_every == 0:
                fname = f"stack_{pred_index:05d}.grd"
                save_stack(stack, f"{stack_dir}/{fname}")
                if log:
                    log.event(t, "stack_exported", file=fname)
            pred_index += 1

        # --- plan ----------------------------------------------------------
        if goal_idx < len(goals) and step % plan_every == 0:
            gx, gy = goals[goal_idx]
            t0 = time.perf_counter()
            if scenario.planner == "mppi":
                goal_state = RobotState(gx, gy, 0.0, 0.0)
                seed = rng.derive_seed(scenario.seed, SIM_PLANNER, plan_index)
                controls, diag = mppi_step(
                    world.robot, nominal, goal_state, stack, mppi_cfg,
                    seed=seed, base_time=t, workers=workers,
                    static_blocked=static_blocked, static_spec=static.spec,
                )
                world.robot_control = RobotControl(float(controls[0, 0]), float(controls[0, 1]))
                nominal = shift_nominal(controls)
                if log:
                    log.plan(t, {"planner": "mppi", "best_cost": round(diag.best_cost, 9),
                                 "mean_cost": round(diag.mean_cost, 9)})
            else:
                start_cell = grid_spec.cell_of(world.robot.x, world.robot.y)
                goal_cell = grid_spec.cell_of(gx, gy)
                result = ana_star(
                    stack, static_inflated, (start_cell, 0), goal_cell,
                    scenario.astar_time_limit_s, 1.0 / timing.planner_hz,
                    robot_radius=plan_radius, v_max=limits.v_max,
                )
                if result.found:
                    current_path = result.path
                    path_t0 = t
                if log:
                    log.plan(t, {"planner": "astar", "found": result.found,
                                 "collision_free": result.collision_free,
                                 "cost": round(result.cost, 9) if result.found else None,
                                 "expansions": result.expansions})
            metrics.planner_times.append(time.perf_counter() - t0)
            plan_index += 1

        if scenario.planner == "astar" and current_path is not None:
            world.robot_control = track_path(
                current_path, world.robot, t - path_t0, limits=limits
            )

        if log:
            log.state(t, world.robot, [h.state for h in world.humans])
            log.control(t, round(world.robot_control.a, 9), round(world.robot_control.omega, 9))

        # --- act ------------------------------------------------------------
        step_world(world, scenario, policy_tables=policy_tables)
        for name, i in world.events:
            if name == "goal_departure":
                observers[i].belief = reset_belief(observers[i].belief)
                resets += 1
                if log:
                    log.event(world.time, "belief_reset", human=i)

        # --- metrics ----------------------------------------------------------
        speeds.append(world.robot.v)
        if n_humans:
            d = min(
                math.hypot(world.robot.x - h.state.x, world.robot.y - h.state.y)
                for h in world.humans
            )
            min_dist = min(min_dist, d)
            colliding = d < footprint_radius
            if colliding and not in_collision:
                collisions += 1
            in_collision = colliding
        if goal_idx < len(goals):
            gx, gy = goals[goal_idx]
            if math.hypot(world.robot.x - gx, world.robot.y - gy) <= scenario.robot.goal_radius:
                goals_reached += 1
                goal_idx += 1
                if log:
                    log.event(world.time, "robot_goal_reached", goal=goal_idx - 1)
        if goal_idx >= len(goals):
            break

    metrics.min_human_distance = None if min_dist is None else float(min_dist)
    metrics.collision_count = collisions
    metrics.robot_mean_speed = float(np.mean(speeds)) if speeds else 0.0
    metrics.goals_reached = goals_reached
    metrics.duration_s = world.time
    metrics.completed = goal_idx >= len(goals)
    metrics.belief_resets = resets
    if log:
        log.metric(world.time, metrics.to_dict())
    return metrics


# ---------------------------------------------------------------------------
# Bundled default scenario
# ---------------------------------------------------------------------------


def default_model_goals() -> tuple:
    """Ten candidate goal locations spread through the default room."""
    return (
        (3.2, 4.6), (3.2, 0.8), (6.4, 0.8), (6.4, 4.6), (0.8, 0.8),
        (8.8, 0.8), (0.8, 4.6), (8.8, 4.6), (4.8, 2.7), (8.8, 2.7),
    )


def default_scenario(seed: int = 0, planner: str = "mppi") -> Scenario:
    """Two humans pacing across the robot's corridor in a 9.6 x 5.4 room."""
    humans = (
        HumanSpec(start=(3.2, 0.8), goals=((3.2, 4.6), (3.2, 0.8)), beta_true=10.0,
                  speed_max=0.8, dwell_s=2.0),
        HumanSpec(start=(6.4, 4.6), goals=((6.4, 0.8), (6.4, 4.6)), beta_true=10.0,
                  speed_max=0.8, dwell_s=2.0),
    )
    return Scenario(
        name="two_human_crossing",
        seed=seed,
        bounds=(9.6, 5.4),
        humans=humans,
        robot=RobotSpec(start=(0.8, 2.7), heading=0.0,
                        goals=((8.2, 2.7), (1.4, 2.7)), goal_radius=0.4),
        timing=TimingSpec(),
        model=ModelSpec(goals=default_model_goals()),
        prediction=PredictionConfig(n=2048, steps=6, dt=0.5, smoothing_sigma=0.15, seed=seed),
        planner=planner,
        # The as-written linear control cost rewards hard braking near the
        # goal, so the bundled scenario uses the quadratic variant.
        mppi=MppiConfig(quadratic_control_cost=True),
    )


# ---------------------------------------------------------------------------
# Scenario file schema (units are explicit in the field names)
# ---------------------------------------------------------------------------


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "seed": s.seed,
        "world": {
            "bounds_m": list(s.bounds),
            "grid_resolution_m": s.grid_resolution,
            "obstacles_m": [list(b) for b in s.obstacles],
        },
        "humans": [
            {
                "start_m": list(h.start),
                "goals_m": [list(g) for g in h.goals],
                "beta_true": h.beta_true,
                "speed_max_mps": h.speed_max,
                "radius_m": h.radius,
                "goal_radius_m": h.goal_radius,
                "dwell_s": h.dwell_s,
            }
            for h in s.humans
        ],
        "robot": {
            "start_m": list(s.robot.start),
            "heading_rad": s.robot.heading,
            "goals_m": [list(g) for g in s.robot.goals],
            "v_max_mps": s.robot.v_max,
            "a_max_mps2": s.robot.a_max,
            "omega_max_radps": s.robot.omega_max,
            "radius_m": s.robot.radius,
            "goal_radius_m": s.robot.goal_radius,
        },
        "timing": {
            "sim_dt_s": s.timing.sim_dt,
            "observation_hz": s.timing.observation_hz,
            "prediction_hz": s.timing.prediction_hz,
            "planner_hz": s.timing.planner_hz,
            "time_limit_s": s.timing.time_limit_s,
        },
        "model": {
            "goals_m": [list(g) for g in s.model.goals],
            "betas": list(s.model.betas),
            "control_speeds": s.model.control_speeds,
            "control_headings": s.model.control_headings,
            "control_v_max_mps": s.model.control_v_max,
            "q_lookahead_s": s.model.q_lookahead_s,
            "stationary_speed_mps": s.model.stationary_speed,
            "stationary_mask_v_mps": s.model.stationary_mask_v,
        },
        "prediction": {
            "samples": s.prediction.n,
            "steps": s.prediction.steps,
            "dt_s": s.prediction.dt,
            "smoothing_sigma_m": s.prediction.smoothing_sigma,
        },
        "planner": {
            "kind": s.planner,
            "astar_time_limit_s": s.astar_time_limit_s,
            "mppi": {
                "horizon_steps": s.mppi.horizon,
                "rollouts": s.mppi.rollouts,
                "dt_s": s.mppi.dt,
                "temperature": s.mppi.temperature,
                "perturbation_std": list(s.mppi.perturbation_std),
                "q_weights": list(s.mppi.q_weights),
                "r_weights": list(s.mppi.r_weights),
                "collision_threshold": s.mppi.collision_threshold,
                "collision_penalty": s.mppi.collision_penalty,
                "quadratic_control_cost": s.mppi.quadratic_control_cost,
            },
        },
        "observation_noise_std_m": s.observation_noise_std,
        "prediction_workers": s.prediction_workers,
    }


_MISSING = object()


def _get(d: dict, key: str, path: str, default=_MISSING):
    if not isinstance(d, dict) or key not in d:
        if default is not _MISSING:
            return default
        name = f"{path}.{key}" if path else key
        raise ScenarioError(f"missing required field '{name}'")
    return d[key]


def _pair(value, path: str) -> tuple[float, float]:
    try:
        x, y = value
        return (float(x), float(y))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"field '{path}' must be a pair of numbers") from exc


def scenario_from_dict(d: dict) -> Scenario:
    """Build a Scenario from the file schema, naming any offending field."""
    if not isinstance(d, dict):
        raise ScenarioError("scenario file must contain a mapping at the top level")
    world = _get(d, "world", "")
    timing_d = _get(d, "timing", "", {})
    model_d = _get(d, "model", "", {})
    pred_d = _get(d, "prediction", "", {})
    planner_d = _get(d, "planner", "", {})
    robot_d = _get(d, "robot", "")
    mppi_d = _get(planner_d, "mppi", "planner", {})

    try:
        humans = tuple(
            HumanSpec(
                start=_pair(_get(h, "start_m", f"humans[{i}]"), f"humans[{i}].start_m"),
                goals=tuple(_pair(g, f"humans[{i}].goals_m[{j}]")
                            for j, g in enumerate(_get(h, "goals_m", f"humans[{i}]"))),
                beta_true=float(_get(h, "beta_true", f"humans[{i}]", 10.0)),
                speed_max=float(_get(h, "speed_max_mps", f"humans[{i}]", 1.4)),
                radius=float(_get(h, "radius_m", f"humans[{i}]", 0.3)),
                goal_radius=float(_get(h, "goal_radius_m", f"humans[{i}]", 0.2)),
                dwell_s=float(_get(h, "dwell_s", f"humans[{i}]", 1.0)),
            )
            for i, h in enumerate(d.get("humans", []))
        )
        scenario = Scenario(
            name=str(_get(d, "name", "", "scenario")),
            seed=int(_get(d, "seed", "", 0)),
            bounds=_pair(_get(world, "bounds_m", "world"), "world.bounds_m"),
            humans=humans,
            robot=RobotSpec(
                start=_pair(_get(robot_d, "start_m", "robot"), "robot.start_m"),
                heading=float(_get(robot_d, "heading_rad", "robot", 0.0)),
                goals=tuple(_pair(g, f"robot.goals_m[{j}]")
                            for j, g in enumerate(_get(robot_d, "goals_m", "robot", []))),
                v_max=float(_get(robot_d, "v_max_mps", "robot", 1.1)),
                a_max=float(_get(robot_d, "a_max_mps2", "robot", 1.0)),
                omega_max=float(_get(robot_d, "omega_max_radps", "robot", 1.0)),
                radius=float(_get(robot_d, "radius_m", "robot", 0.25)),
                goal_radius=float(_get(robot_d, "goal_radius_m", "robot", 0.3)),
            ),
            timing=TimingSpec(
                sim_dt=float(_get(timing_d, "sim_dt_s", "timing", 0.05)),
                observation_hz=float(_get(timing_d, "observation_hz", "timing", 10.0)),
                prediction_hz=float(_get(timing_d, "prediction_hz", "timing", 2.0)),
                planner_hz=float(_get(timing_d, "planner_hz", "timing", 10.0)),
                time_limit_s=float(_get(timing_d, "time_limit_s", "timing", 40.0)),
            ),
            model=ModelSpec(
                goals=tuple(_pair(g, f"model.goals_m[{j}]")
                            for j, g in enumerate(_get(model_d, "goals_m", "model", []))),
                betas=tuple(float(b) for b in _get(model_d, "betas", "model",
                                                   tuple(np.geomspace(0.1, 10.0, 5)))),
                control_speeds=int(_get(model_d, "control_speeds", "model", 4)),
                control_headings=int(_get(model_d, "control_headings", "model", 24)),
                control_v_max=float(_get(model_d, "control_v_max_mps", "model", 1.4)),
                q_lookahead_s=float(_get(model_d, "q_lookahead_s", "model", 0.5)),
                stationary_speed=float(_get(model_d, "stationary_speed_mps", "model", 0.05)),
                stationary_mask_v=float(_get(model_d, "stationary_mask_v_mps", "model", 0.0)),
            ),
            prediction=PredictionConfig(
                n=int(_get(pred_d, "samples", "prediction", 2048)),
                steps=int(_get(pred_d, "steps", "prediction", 6)),
                dt=float(_get(pred_d, "dt_s", "prediction", 0.5)),
                smoothing_sigma=float(_get(pred_d, "smoothing_sigma_m", "prediction", 0.1)),
                seed=int(_get(d, "seed", "", 0)),
            ),
            planner=str(_get(planner_d, "kind", "planner", "mppi")),
            astar_time_limit_s=float(_get(planner_d, "astar_time_limit_s", "planner", 0.1)),
            mppi=MppiConfig(
                horizon=int(_get(mppi_d, "horizon_steps", "planner.mppi", 40)),
                rollouts=int(_get(mppi_d, "rollouts", "planner.mppi", 512)),
                dt=float(_get(mppi_d, "dt_s", "planner.mppi", 0.1)),
                temperature=float(_get(mppi_d, "temperature", "planner.mppi", 1.0)),
                perturbation_std=tuple(
                    float(x) for x in _get(mppi_d, "perturbation_std", "planner.mppi", (0.5, 0.3))
                ),
                q_weights=tuple(
                    float(x) for x in _get(mppi_d, "q_weights", "planner.mppi", (3.0, 3.0, 10.0, 0.0))
                ),
                r_weights=tuple(
                    float(x) for x in _get(mppi_d, "r_weights", "planner.mppi", (2.0, 1.0))
                ),
                collision_threshold=float(_get(mppi_d, "collision_threshold", "planner.mppi", 0.1)),
                collision_penalty=float(_get(mppi_d, "collision_penalty", "planner.mppi", 1000.0)),
                quadratic_control_cost=bool(_get(mppi_d, "quadratic_control_cost", "planner.mppi", False)),
            ),
            grid_resolution=float(_get(world, "grid_resolution_m", "world", 0.1)),
            obstacles=tuple(tuple(float(v) for v in b)
                            for b in _get(world, "obstacles_m", "world", [])),
            observation_noise_std=float(_get(d, "observation_noise_std_m", "", 0.0)),
            prediction_workers=int(_get(d, "prediction_workers", "", 0)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"invalid scenario value: {exc}") from exc
    scenario.validate()
    return scenario


def load_scenario(path) -> Scenario:
    import yaml

    with open(path, "r") as f:
        data = yaml.safe_load(f)
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    import yaml

    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(scenario), f, sort_keys=False)
