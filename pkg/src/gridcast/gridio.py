"""File formats: layered-grid stacks, grid CSV export, run-log records.

Layered-grid format (binary, little-endian):

    magic   4 bytes  b"GCST"
    version u32      currently 1
    width   u32
    height  u32
    steps   u32
    resolution, origin_x, origin_y, dt, base_time   5 x f64
    layers  steps * height * width f64, row-major per layer

Run logs are line-delimited JSON: one record per line with a ``type``
field ("state", "observation", "belief", "prediction", "plan",
"control", "event" or "metric") and a logical timestamp ``t``.  Records
never contain wall-clock values, so logs are byte-identical across runs
with the same seed.
"""

from __future__ import annotations

import json
import struct
from typing import IO, Iterable

import numpy as np

from .occupancy import GridSpec, OccupancyGrid
from .prediction import PredictionStack

_MAGIC = b"GCST"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII5d")


def save_stack(stack: PredictionStack, path) -> None:
    """Write a prediction stack in the layered-grid format."""
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        stack.spec.width,
        stack.spec.height,
        stack.steps,
        stack.spec.resolution,
        stack.spec.origin[0],
        stack.spec.origin[1],
        stack.dt,
        stack.base_time,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(stack.layers, dtype="<f8").tobytes())


def load_stack(path) -> PredictionStack:
    """Read a layered-grid file back into a PredictionStack."""
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"{path}: truncated layered-grid header")
        magic, version, width, height, steps, res, ox, oy, dt, base_time = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a layered-grid file (bad magic {magic!r})")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported layered-grid version {version}")
        count = steps * height * width
        data = np.frombuffer(f.read(count * 8), dtype="<f8")
        if data.size != count:
            raise ValueError(f"{path}: truncated layer data")
    spec = GridSpec(width=width, height=height, resolution=res, origin=(ox, oy))
    layers = data.reshape(steps, height, width)
    return PredictionStack(spec, layers, base_time, dt)


def grid_to_csv(grid: OccupancyGrid, path) -> None:
    """Write one grid as CSV rows (row 0 = lowest y)."""
    np.savetxt(path, grid.values, delimiter=",", fmt="%.17g")


def grid_from_csv(path, spec: GridSpec) -> OccupancyGrid:
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    return OccupancyGrid(spec, values)


def _jsonable(obj):
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def dumps_record(record: dict) -> str:
    """Canonical single-line JSON encoding used by run logs."""
    return json.dumps(
        record, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_jsonable
    )


class RunLogWriter:
    """Append-only writer for line-delimited run-log records."""

    def __init__(self, fh: IO[str]):
        self._fh = fh

    def write(self, record: dict) -> None:
        if "type" not in record or "t" not in record:
            raise ValueError("run-log records need 'type' and 't' fields")
        self._fh.write(dumps_record(record) + "\n")

    def state(self, t: float, robot, humans) -> None:
        self.write(
            {
                "type": "state",
                "t": round(t, 9),
                "robot": [robot.x, robot.y, robot.v, robot.theta],
                "humans": [[h.x, h.y] for h in humans],
            }
        )

    def observation(self, t: float, human: int, xy) -> None:
        self.write({"type": "observation", "t": round(t, 9), "human": human,
                    "xy": [float(xy[0]), float(xy[1])]})

    def belief(self, t: float, human: int, belief) -> None:
        self.write(
            {
                "type": "belief",
                "t": round(t, 9),
                "human": human,
                "p": [float(p) for p in belief.probs()],
            }
        )

    def prediction(self, t: float, humans: list, steps: int, dt: float, stack_file=None) -> None:
        rec = {"type": "prediction", "t": round(t, 9), "humans": humans,
               "steps": steps, "dt": dt}
        if stack_file is not None:
            rec["stack_file"] = str(stack_file)
        self.write(rec)

    def plan(self, t: float, payload: dict) -> None:
        self.write({"type": "plan", "t": round(t, 9), **payload})

    def control(self, t: float, a: float, omega: float) -> None:
        self.write({"type": "control", "t": round(t, 9), "a": a, "omega": omega})

    def event(self, t: float, name: str, **fields) -> None:
        self.write({"type": "event", "t": round(t, 9), "event": name, **fields})

    def metric(self, t: float, payload: dict) -> None:
        self.write({"type": "metric", "t": round(t, 9), **payload})


def read_run_log(path) -> list[dict]:
    """Load every record of a line-delimited run log."""
    records = []
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def iter_records(path, record_type: str) -> Iterable[dict]:
    for rec in read_run_log(path):
        if rec["type"] == record_type:
            yield rec
