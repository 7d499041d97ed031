"""Anytime time-varying grid search and a path-tracking controller.

The planner searches a time-expanded 8-connected grid where the obstacle
field changes per prediction layer; layers beyond the horizon reuse the
last one.  It follows the anytime-nonparametric strategy: repeatedly
find a solution by expanding the open node that maximizes
e(s) = (G - g(s)) / h(s), tighten the incumbent cost G, prune, and keep
improving until the open set empties or the time budget runs out.
Solution costs within one call are nonincreasing.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..agents import RobotControl, RobotLimits, RobotState, DEFAULT_ROBOT_LIMITS, wrap_angle
from ..occupancy import OccupancyGrid, collision_field
from ..prediction import PredictionStack

SQRT2 = math.sqrt(2.0)

# (dx, dy, length in cells); (0, 0) is the wait move
_MOVES = [
    (0, 0, 1.0),
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
]


@dataclass(frozen=True)
class PlanNode:
    """Search state: grid cell, prediction-layer index, cost-to-come."""

    cell: tuple[int, int]
    time_index: int
    g_cost: float
    parent: Optional["PlanNode"] = None

    def __post_init__(self):
        if self.time_index < 0:
            raise ValueError("time index must be >= 0")
        if self.g_cost < 0:
            raise ValueError("cost must be >= 0")
        if self.parent is not None and self.g_cost < self.parent.g_cost:
            raise ValueError("cost must be monotone along the parent chain")


@dataclass(frozen=True)
class Path:
    """Timed waypoints: ((x, y) meters, time seconds), strictly increasing."""

    points: tuple

    def __post_init__(self):
        pts = tuple(((float(p[0][0]), float(p[0][1])), float(p[1])) for p in self.points)
        for (_, t1), (_, t2) in zip(pts, pts[1:]):
            if t2 <= t1:
                raise ValueError("waypoint times must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def duration(self) -> float:
        return self.points[-1][1] - self.points[0][1] if self.points else 0.0

    def position_at(self, t: float) -> tuple[float, float]:
        """Linear interpolation of the path position at time t (clamped)."""
        pts = self.points
        if t <= pts[0][1]:
            return pts[0][0]
        if t >= pts[-1][1]:
            return pts[-1][0]
        for (p0, t0), (p1, t1) in zip(pts, pts[1:]):
            if t0 <= t <= t1:
                w = (t - t0) / (t1 - t0)
                return (p0[0] + w * (p1[0] - p0[0]), p0[1] + w * (p1[1] - p0[1]))
        return pts[-1][0]


@dataclass
class PlanResult:
    """Anytime search outcome: best path plus solve diagnostics."""

    path: Optional[Path]
    found: bool
    collision_free: bool
    cost: float = math.inf
    solution_costs: list = field(default_factory=list)
    expansions: int = 0
    timed_out: bool = False


def _blocked_layers(
    stack: Optional[PredictionStack],
    robot_radius: float,
    collision_threshold: float,
) -> np.ndarray:
    """(L, height, width) boolean penalty field per prediction layer (L may be 0)."""
    if stack is None or stack.steps == 0:
        return np.zeros((0, 1, 1), dtype=bool)
    layers = [
        collision_field(stack.grid(k), robot_radius) >= collision_threshold
        for k in range(stack.steps)
    ]
    return np.stack(layers, axis=0)


def ana_star(
    stack: Optional[PredictionStack],
    static_mask: Optional[OccupancyGrid],
    start: tuple[tuple[int, int], int],
    goal_cell: tuple[int, int],
    time_limit_s: float,
    dt_plan: float,
    grid_shape: Optional[tuple[int, int]] = None,
    collision_threshold: float = 0.1,
    collision_penalty: float = 1000.0,
    robot_radius: float = 0.25,
    v_max: float = 1.1,
    resolution: Optional[float] = None,
) -> PlanResult:
    """Anytime search over (cell, layer) states with per-layer penalties.

    Every move advances one prediction layer and costs its traversal time
    (dt_plan, scaled by sqrt(2) for diagonals) plus ``collision_penalty``
    when the landing cell's disc-summed occupancy at the landing layer
    meets ``collision_threshold``.  Cells marked in ``static_mask`` are
    impassable.  Layers beyond the horizon reuse the last layer, so the
    layer index saturates there.

    Returns the best path found within ``time_limit_s``; ``found`` is
    False when no solution was reached in time, and ``collision_free``
    reports whether the best path avoids every penalty cell.
    """
    if time_limit_s <= 0:
        raise ValueError("time limit must be > 0")
    if dt_plan <= 0:
        raise ValueError("dt_plan must be > 0")
    deadline = time.perf_counter() + time_limit_s

    if static_mask is not None:
        static_blocked = static_mask.values >= 0.5
        shape = static_mask.spec.shape
        res = static_mask.spec.resolution
    else:
        if stack is not None:
            shape = stack.spec.shape
            res = stack.spec.resolution
        elif grid_shape is not None:
            shape = grid_shape
            res = resolution if resolution is not None else 1.0
        else:
            raise ValueError("need a stack, static mask or grid_shape to size the search")
        static_blocked = np.zeros(shape, dtype=bool)
    if resolution is not None:
        res = resolution
    height, width = shape

    dyn_blocked = _blocked_layers(stack, robot_radius, collision_threshold)
    horizon = dyn_blocked.shape[0]

    (sx, sy), start_k = start
    gx, gy = goal_cell
    if not (0 <= sx < width and 0 <= sy < height and 0 <= gx < width and 0 <= gy < height):
        raise ValueError("start and goal must lie inside the grid")
    start_k = min(start_k, horizon)

    # Admissible time-to-go: Euclidean distance at the faster of the robot's
    # top speed and the grid traversal speed, so h never overestimates.
    h_scale = res * min(1.0 / v_max, dt_plan / res) if v_max > 0 else dt_plan

    def heuristic(ix: int, iy: int) -> float:
        return math.hypot(ix - gx, iy - gy) * h_scale

    def e_value(g: float, h: float, G: float) -> float:
        if G is math.inf or h <= 0.0:
            return math.inf
        return (G - g) / h

    def edge(ix: int, iy: int, kcap: int, dx: int, dy: int, length: float):
        nx, ny = ix + dx, iy + dy
        if not (0 <= nx < width and 0 <= ny < height):
            return None
        if static_blocked[ny, nx]:
            return None
        nk = min(kcap + 1, horizon)
        cost = dt_plan * length
        if horizon > 0 and dyn_blocked[nk - 1, ny, nx]:
            cost += collision_penalty
        return nx, ny, nk, cost

    start_state = (sx, sy, start_k)
    g_best = {start_state: 0.0}
    parent: dict = {start_state: None}
    G = math.inf
    best_goal_state = None
    counter = 0
    h0 = heuristic(sx, sy)
    # Max-e selection; ties (all e = inf before the first solution) fall back
    # to smallest h, which makes the first phase greedy like ANA*.
    open_heap = [(-e_value(0.0, h0, G), h0, counter, 0.0, start_state)]
    result = PlanResult(path=None, found=False, collision_free=False)

    def rebuild():
        nonlocal open_heap
        fresh = []
        for _, h, c, g, s in open_heap:
            if g == g_best.get(s) and g + h < G:
                fresh.append((-e_value(g, h, G), h, c, g, s))
        heapq.heapify(fresh)
        open_heap = fresh

    pops = 0
    while open_heap:
        if pops % 64 == 0 and time.perf_counter() > deadline:
            result.timed_out = True
            break
        pops += 1
        _, _, _, g, s = heapq.heappop(open_heap)
        if g != g_best.get(s):
            continue  # stale entry
        ix, iy, kcap = s
        if g + heuristic(ix, iy) >= G:
            continue
        if (ix, iy) == (gx, gy):
            G = g
            best_goal_state = s
            result.solution_costs.append(g)
            rebuild()
            continue
        result.expansions += 1
        for dx, dy, length in _MOVES:
            nxt = edge(ix, iy, kcap, dx, dy, length)
            if nxt is None:
                continue
            nx, ny, nk, cost = nxt
            ns = (nx, ny, nk)
            ng = g + cost
            if ng < g_best.get(ns, math.inf):
                g_best[ns] = ng
                parent[ns] = s
                nh = heuristic(nx, ny)
                if ng + nh < G:
                    counter += 1
                    heapq.heappush(open_heap, (-e_value(ng, nh, G), nh, counter, ng, ns))

    if best_goal_state is None:
        return result

    chain = []
    s = best_goal_state
    while s is not None:
        chain.append(s)
        s = parent[s]
    chain.reverse()

    # Recompute the chain's true cost from its edges; parent pointers may
    # have improved after the incumbent was recorded, never worsened.
    cost = 0.0
    clean = True
    for (px, py, _), (cx, cy, ck) in zip(chain, chain[1:]):
        length = SQRT2 if (px != cx and py != cy) else 1.0
        cost += dt_plan * length
        if horizon > 0 and dyn_blocked[ck - 1, cy, cx]:
            cost += collision_penalty
            clean = False

    def center(ix: int, iy: int) -> tuple[float, float]:
        if static_mask is not None:
            return static_mask.spec.cell_center(ix, iy)
        if stack is not None:
            return stack.spec.cell_center(ix, iy)
        return ((ix + 0.5) * res, (iy + 0.5) * res)

    points = [(center(ix, iy), i * dt_plan) for i, (ix, iy, _) in enumerate(chain)]
    result.path = Path(tuple(points))
    result.found = True
    result.collision_free = clean
    result.cost = cost
    return result


@dataclass(frozen=True)
class TrackingGains:
    """Feedback gains for the path follower."""

    k_along: float = 1.5
    k_speed: float = 2.0
    k_heading: float = 3.0
    lookahead_s: float = 0.4
    deadband_m: float = 0.02


def track_path(
    path: Path,
    z: RobotState,
    t: float,
    limits: RobotLimits = DEFAULT_ROBOT_LIMITS,
    gains: TrackingGains = TrackingGains(),
) -> RobotControl:
    """Feedback control steering the robot toward the time-indexed reference.

    Looks up the path position slightly ahead of ``t``, regulates speed
    toward the reference-point closure rate and heading toward the
    line-of-sight angle.  Output respects the robot control bounds; when
    the robot sits on the reference with matched heading the control is
    zero (within a small deadband).
    """
    if len(path) == 0:
        raise ValueError("cannot track an empty path")
    look_t = t + gains.lookahead_s
    ref = path.position_at(look_t)
    dx = ref[0] - z.x
    dy = ref[1] - z.y
    dist = math.hypot(dx, dy)
    if dist < gains.deadband_m and z.v < 0.05:
        return RobotControl(0.0, 0.0)
    heading_ref = math.atan2(dy, dx)
    heading_err = wrap_angle(heading_ref - z.theta)
    v_des = min(limits.v_max, gains.k_along * dist / max(gains.lookahead_s, 1e-6))
    # Slow down when pointed away from the reference.
    v_des *= max(0.0, math.cos(heading_err))
    a = gains.k_speed * (v_des - z.v)
    omega = gains.k_heading * heading_err
    a = min(max(a, -limits.a_max), limits.a_max)
    omega = min(max(omega, -limits.omega_max), limits.omega_max)
    return RobotControl(a, omega)
