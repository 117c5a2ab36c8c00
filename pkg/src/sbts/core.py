"""Shared data model: time grids, panels, drift/generation configs, CSV I/O."""

from __future__ import annotations

import csv
import hashlib
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or input data (maps to CLI exit code 1)."""


class PanelError(ConfigError):
    """A panel violates one of its structural invariants."""


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    substeps_per_interval: int = 200

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 2:
            raise ConfigError("grid needs at least 2 times")
        if not np.all(np.isfinite(t)):
            raise ConfigError("grid times must be finite")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("non-increasing grid")
        if int(self.substeps_per_interval) < 1:
            raise ConfigError("substeps_per_interval must be >= 1")
        object.__setattr__(self, "substeps_per_interval", int(self.substeps_per_interval))

    @classmethod
    def uniform(cls, n: int, dt: float, start: float = 0.0, substeps: int = 200) -> "TimeGrid":
        return cls(start + dt * np.arange(n), substeps)

    def __len__(self) -> int:
        return self.times.size

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        d = self.dt
        return bool(np.allclose(d, d[0], rtol=rtol, atol=0.0))

    def tail(self, n: int) -> "TimeGrid":
        return TimeGrid(self.times[-n:], self.substeps_per_interval)

    def prepend(self, dt: float | None = None) -> "TimeGrid":
        step = self.dt[0] if dt is None else dt
        return TimeGrid(np.concatenate([[self.times[0] - step], self.times]), self.substeps_per_interval)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return (
            self.substeps_per_interval == other.substeps_per_interval
            and self.times.shape == other.times.shape
            and bool(np.array_equal(self.times, other.times))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Panel:
    """M samples x N grid times x d features, stored sample-major (C order)."""

    data: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arr = arr.copy() if arr is self.data else arr
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_times(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def subset(self, idx) -> "Panel":
        return Panel(self.data[idx], self.grid)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.data.shape, dtype=np.int64).tobytes())
        h.update(self.data.tobytes())
        h.update(self.grid.times.tobytes())
        return h.hexdigest()[:16]


Order = Union[int, str]


@dataclass(frozen=True)
class DriftConfig:
    bandwidths: np.ndarray
    markov_order: Order = 1
    weight_floor: float = 1e-300

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.bandwidths, dtype=np.float64)).copy()
        h.setflags(write=False)
        object.__setattr__(self, "bandwidths", h)
        if h.ndim != 1 or h.size == 0 or not np.all(np.isfinite(h)) or np.any(h <= 0):
            raise ConfigError(f"bandwidths must be positive and finite, got {h.tolist()}")
        if not self.weight_floor > 0:
            raise ConfigError("weight_floor must be > 0")
        k = self.markov_order
        if isinstance(k, str):
            if k != "full":
                raise ConfigError(f"markov_order must be an integer or 'full', got {k!r}")
        elif int(k) != k or int(k) < 1:
            raise ConfigError(f"markov_order must be >= 1, got {k!r}")
        else:
            object.__setattr__(self, "markov_order", int(k))

    @classmethod
    def uniform(cls, h: float, d: int, markov_order: Order = 1, **kw) -> "DriftConfig":
        return cls(np.full(d, float(h)), markov_order, **kw)

    def bandwidths_for(self, d: int) -> np.ndarray:
        """Broadcast a length-1 bandwidth to d features."""
        if self.bandwidths.size == d:
            return self.bandwidths
        if self.bandwidths.size == 1:
            return np.full(d, self.bandwidths[0])
        raise ConfigError(f"{self.bandwidths.size} bandwidths for {d} features")

    def order_for(self, n_times: int) -> int:
        if self.markov_order == "full":
            return n_times
        return min(int(self.markov_order), n_times)

    def to_dict(self) -> dict:
        return {
            "bandwidths": self.bandwidths.tolist(),
            "markov_order": self.markov_order,
            "weight_floor": self.weight_floor,
        }


@dataclass(frozen=True)
class GenerationConfig:
    num_paths: int
    seed: int = 0
    noise_scale: float = 1.0
    start: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if int(self.num_paths) < 1:
            raise ConfigError("num_paths must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not (self.noise_scale >= 0 and np.isfinite(self.noise_scale)):
            raise ConfigError("noise_scale must be a finite nonnegative real")


def validate_panel(panel: Panel) -> str | None:
    """Return a description of the first violated invariant, or None if the panel is well formed."""
    data = np.asarray(panel.data)
    grid = panel.grid
    times = np.asarray(grid.times)
    if times.ndim != 1 or times.size < 2:
        return "grid needs at least 2 times"
    bad = np.nonzero(np.diff(times) <= 0)[0]
    if bad.size:
        return f"non-increasing grid at index {int(bad[0]) + 1}"
    if data.ndim != 3:
        return f"panel must be 3-dimensional (M, N, d), got shape {data.shape}"
    m, n, d = data.shape
    if m < 1 or d < 1:
        return f"panel needs M >= 1 and d >= 1, got shape {data.shape}"
    if n != times.size:
        return f"shape mismatch: panel has {n} times, grid has {times.size}"
    finite = np.isfinite(data)
    if not finite.all():
        i, j, k = (int(v) for v in np.argwhere(~finite)[0])
        return f"non-finite entry at (m={i}, i={j}, j={k})"
    return None


def check_panel(panel: Panel) -> Panel:
    msg = validate_panel(panel)
    if msg is not None:
        raise PanelError(msg)
    return panel


def anchor(panel: Panel, start: Sequence[float] | None = None, dt: float | None = None) -> Panel:
    """Prepend a start row (zeros by default) one grid step before the first time."""
    m, _, d = panel.shape
    row = np.zeros(d) if start is None else np.asarray(start, dtype=np.float64)
    head = np.broadcast_to(row, (m, 1, d))
    return Panel(np.concatenate([head, panel.data], axis=1), panel.grid.prepend(dt))


def strip_anchor(panel: Panel) -> Panel:
    return Panel(panel.data[:, 1:], TimeGrid(panel.grid.times[1:], panel.grid.substeps_per_interval))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``key`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


# --- CSV -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def panel_to_csv(data: np.ndarray) -> str:
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    m, n, d = data.shape
    lines = ["sample,t_index," + ",".join(f"f{j}" for j in range(d))]
    for s in range(m):
        for i in range(n):
            lines.append(f"{s},{i}," + ",".join(_fmt(v) for v in data[s, i]))
    return "\n".join(lines) + "\n"


def write_panel_csv(path, panel: Panel | np.ndarray) -> None:
    data = panel.data if isinstance(panel, Panel) else panel
    write_atomic(path, panel_to_csv(data))


def read_panel_csv(path, grid: TimeGrid | None = None) -> Panel | np.ndarray:
    """Read the long-form CSV; returns a Panel if a grid is given, else the raw (M, N, d) array."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["sample", "t_index"] or len(header) < 3:
            raise ConfigError(f"{path}: header must be 'sample,t_index,f0,...'")
        d = len(header) - 2
        if header[2:] != [f"f{j}" for j in range(d)]:
            raise ConfigError(f"{path}: feature columns must be f0..f{d - 1}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ConfigError(f"{path}:{lineno}: expected {d + 2} columns")
            try:
                rows.append((int(row[0]), int(row[1]), [float(v) for v in row[2:]]))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    m = max(r[0] for r in rows) + 1
    n = max(r[1] for r in rows) + 1
    if len(rows) != m * n:
        raise ConfigError(f"{path}: expected {m * n} rows for {m} samples x {n} times, got {len(rows)}")
    data = np.empty((m, n, d))
    prev = (-1, n - 1)
    for s, i, vals in rows:
        expected = (prev[0] + 1, 0) if prev[1] == n - 1 else (prev[0], prev[1] + 1)
        if (s, i) != expected:
            raise ConfigError(f"{path}: rows must be sorted by (sample, t_index); got ({s}, {i})")
        data[s, i] = vals
        prev = (s, i)
    if grid is None:
        return data
    return check_panel(Panel(data, grid))
