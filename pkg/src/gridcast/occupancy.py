"""Occupancy grids: particle emplacement, Gaussian smoothing, unions.

Grids store probability mass per cell as an (height, width) float64
array; cell (ix, iy) maps to ``values[iy, ix]``.  All operations return
new grids; existing grids are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridSpecMismatch(ValueError):
    """Raised when combining grids whose specs differ."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a grid: cell counts, resolution and world origin.

    ``origin`` is the world position of the lower-left corner of cell
    (0, 0); cell (ix, iy) covers [origin + ix*res, origin + (ix+1)*res).
    """

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one cell per axis")
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def cells_of(self, xy: np.ndarray, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Map (n, 2) world positions to integer cell indices (ix, iy)."""
        xy = np.atleast_2d(np.asarray(xy))
        ix = np.floor((xy[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        if clamp:
            ix = np.clip(ix, 0, self.width - 1)
            iy = np.clip(iy, 0, self.height - 1)
        return ix, iy

    def cell_of(self, x: float, y: float, clamp: bool = True) -> tuple[int, int]:
        ix, iy = self.cells_of(np.array([[x, y]]), clamp=clamp)
        return int(ix[0]), int(iy[0])

    def centers_x(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution

    def centers_y(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def all_centers(self) -> np.ndarray:
        """(height*width, 2) cell centers in row-major (y-major) order."""
        cx, cy = np.meshgrid(self.centers_x(), self.centers_y())
        return np.stack([cx.ravel(), cy.ravel()], axis=1)


@dataclass(frozen=True)
class OccupancyGrid:
    """Nonnegative mass per cell on a GridSpec."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            raise ValueError(f"values shape {v.shape} does not match spec {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        if np.any(v < 0):
            raise ValueError("grid values must be nonnegative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "OccupancyGrid":
        return cls(spec, np.zeros(spec.shape))

    def mass(self) -> float:
        return float(self.values.sum())

    def at(self, ix: int, iy: int) -> float:
        return float(self.values[iy, ix])


def emplace_counts(xy: np.ndarray, spec: GridSpec) -> np.ndarray:
    """(height, width) particle counts; out-of-bounds points clamp to the edge."""
    ix, iy = spec.cells_of(xy, clamp=True)
    flat = np.bincount(iy * spec.width + ix, minlength=spec.height * spec.width)
    return flat.reshape(spec.shape).astype(float)


def emplace(batch, spec: GridSpec) -> OccupancyGrid:
    """Deposit 1/n mass per particle at its nearest cell.

    Out-of-bounds particles are clamped to the boundary cell so the total
    mass is always exactly 1 (up to accumulation error).
    """
    counts = emplace_counts(batch.xy, spec)
    return OccupancyGrid(spec, counts / batch.n)


def _smoothing_matrix(size: int, sigma_cells: float) -> np.ndarray:
    """1D convolution matrix, truncated at 3 sigma, column-normalized.

    Column j holds the kernel of a unit mass at cell j; normalizing each
    column makes the convolution conserve mass exactly, including at the
    grid edges where the kernel is truncated.
    """
    radius = int(np.ceil(3.0 * sigma_cells))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma_cells) ** 2)
    m = np.zeros((size, size))
    for off, k in zip(offsets, kernel):
        idx = np.arange(max(0, -off), min(size, size - off))
        m[idx + off, idx] += k
    return m / m.sum(axis=0, keepdims=True)


def smooth_values(values: np.ndarray, spec: GridSpec, sigma_m: float) -> np.ndarray:
    """Separable truncated-Gaussian blur of a raw (height, width) array."""
    if sigma_m < 0:
        raise ValueError("sigma must be >= 0")
    sigma_cells = sigma_m / spec.resolution
    if sigma_cells < 1e-12:
        return values.copy()
    my = _smoothing_matrix(spec.height, sigma_cells)
    mx = _smoothing_matrix(spec.width, sigma_cells)
    out = my @ values @ mx.T
    before = values.sum()
    after = out.sum()
    if after > 0.0:
        out *= before / after
    np.maximum(out, 0.0, out=out)
    return out


def gaussian_smooth(grid: OccupancyGrid, sigma_m: float) -> OccupancyGrid:
    """Gaussian-blur a grid; sigma = 0 is the identity and mass is preserved."""
    return OccupancyGrid(grid.spec, smooth_values(grid.values, grid.spec, sigma_m))


def union(grids, mode: str = "max") -> OccupancyGrid:
    """Merge per-agent occupancy grids into one field.

    mode "max" takes the cell-wise maximum (the conservative union used
    throughout); mode "independent" combines as 1 - prod(1 - p), the
    union probability under independence.
    """
    grids = list(grids)
    if not grids:
        raise ValueError("union of zero grids")
    spec = grids[0].spec
    for g in grids[1:]:
        if g.spec != spec:
            raise GridSpecMismatch(f"grid specs differ: {g.spec} vs {spec}")
    if mode == "max":
        out = grids[0].values.copy()
        for g in grids[1:]:
            np.maximum(out, g.values, out=out)
    elif mode == "independent":
        miss = 1.0 - np.clip(grids[0].values, 0.0, 1.0)
        for g in grids[1:]:
            miss = miss * (1.0 - np.clip(g.values, 0.0, 1.0))
        out = 1.0 - miss
    else:
        raise ValueError(f"unknown union mode {mode!r}")
    return OccupancyGrid(spec, out)


def union_max(grids) -> OccupancyGrid:
    """Cell-wise maximum of grids sharing one spec."""
    return union(grids, mode="max")


def _disc_offsets(spec: GridSpec, radius_m: float) -> np.ndarray:
    """(k, 2) integer cell offsets whose center displacement is within radius."""
    r_cells = int(np.floor(radius_m / spec.resolution))
    offs = []
    for dy in range(-r_cells, r_cells + 1):
        for dx in range(-r_cells, r_cells + 1):
            if (dx * spec.resolution) ** 2 + (dy * spec.resolution) ** 2 <= radius_m**2:
                offs.append((dx, dy))
    return np.array(offs, dtype=np.int64).reshape(-1, 2)


def collision_probability(
    grid: OccupancyGrid, robot_pos: tuple[float, float], robot_radius: float
) -> float:
    """Probability mass within ``robot_radius`` of the robot position.

    Sums the grid cells whose centers lie inside the disc and clamps to
    [0, 1] (union grids are not normalized).
    """
    if robot_radius < 0:
        raise ValueError("radius must be >= 0")
    cx = grid.spec.centers_x() - robot_pos[0]
    cy = grid.spec.centers_y() - robot_pos[1]
    mask = (cx[None, :] ** 2 + cy[:, None] ** 2) <= robot_radius**2
    return float(min(1.0, grid.values[mask].sum()))


def collision_field(grid: OccupancyGrid, robot_radius: float) -> np.ndarray:
    """(height, width) collision probability with the robot at each cell center.

    Equivalent to evaluating :func:`collision_probability` at every cell
    center; computed as a sum of shifted copies over the disc footprint.
    """
    offs = _disc_offsets(grid.spec, robot_radius)
    h, w = grid.spec.shape
    out = np.zeros((h, w))
    v = grid.values
    for dx, dy in offs:
        # cell (ix, iy) accumulates v[iy + dy, ix + dx]
        ys = slice(max(0, -dy), min(h, h - dy))
        xs = slice(max(0, -dx), min(w, w - dx))
        ys_src = slice(max(0, dy), min(h, h + dy))
        xs_src = slice(max(0, dx), min(w, w + dx))
        out[ys, xs] += v[ys_src, xs_src]
    return np.minimum(out, 1.0)
