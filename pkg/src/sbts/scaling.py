"""Invertible per-feature data transforms.

Statistics are pooled over all samples and times of a feature and use the
unbiased (n - 1) denominator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, Panel, TimeGrid

MODES = ("log_return_rescale", "rescale", "increment_rescale", "standardize", "min_max", "identity")


class DomainError(ConfigError):
    pass


class DegenerateFeature(ConfigError):
    pass


def _feature_std(data: np.ndarray) -> np.ndarray:
    flat = data.reshape(-1, data.shape[-1])
    if flat.shape[0] < 2:
        raise DegenerateFeature("need at least 2 values per feature")
    return flat.std(axis=0, ddof=1)


def _require_positive(values: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        raise DegenerateFeature(f"feature {int(bad[0])} has zero {what}")


@dataclass(frozen=True)
class ScalingTransform:
    mode: str
    dt: float = 1.0
    scale: np.ndarray = field(default_factory=lambda: np.ones(1))
    shift: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown scaling mode {self.mode!r}")
        object.__setattr__(self, "scale", np.atleast_1d(np.asarray(self.scale, dtype=np.float64)))
        object.__setattr__(self, "shift", np.atleast_1d(np.asarray(self.shift, dtype=np.float64)))

    @property
    def n_features(self) -> int:
        return self.scale.size

    def _check(self, data: np.ndarray) -> None:
        if self.mode != "identity" and data.shape[-1] != self.n_features:
            raise ConfigError(f"transform fitted on {self.n_features} features, panel has {data.shape[-1]}")

    def forward(self, data: np.ndarray) -> np.ndarray:
        """Apply the affine part (x - shift) / scale."""
        data = np.asarray(data, dtype=np.float64)
        self._check(data)
        return (data - self.shift) / self.scale

    def inverse(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        self._check(data)
        return data * self.scale + self.shift

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dt": self.dt,
            "scale": self.scale.tolist(),
            "shift": self.shift.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ScalingTransform":
        extra = set(obj) - {"mode", "dt", "scale", "shift"}
        if extra:
            raise ConfigError(f"unknown transform keys: {sorted(extra)}")
        return cls(obj["mode"], float(obj.get("dt", 1.0)), obj["scale"], obj["shift"])

    @classmethod
    def from_json(cls, text: str) -> "ScalingTransform":
        return cls.from_dict(json.loads(text))


def to_log_returns(prices: Panel) -> Panel:
    """R_j = log(X_{j+1} / X_j); the result lives on the grid minus its first time."""
    data = prices.data
    bad = np.argwhere(~(data > 0))
    if bad.size:
        m, i, j = (int(v) for v in bad[0])
        raise DomainError(f"nonpositive price {data[m, i, j]!r} at (m={m}, i={i}, j={j})")
    returns = np.diff(np.log(data), axis=1)
    grid = TimeGrid(prices.grid.times[1:], prices.grid.substeps_per_interval)
    return Panel(returns, grid)


def rescale_returns(returns: Panel, dt: float) -> tuple[Panel, ScalingTransform]:
    """Scale each feature so that its empirical std is exactly sqrt(dt)."""
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    sd = _feature_std(returns.data)
    _require_positive(sd, "variance")
    tr = ScalingTransform("rescale", float(dt), sd / np.sqrt(dt), np.zeros_like(sd))
    return Panel(tr.forward(returns.data), returns.grid), tr


def rescale_increments(panel: Panel, dt: float | None = None) -> tuple[Panel, ScalingTransform]:
    """Scale level series so their one-step increments have std sqrt(dt).

    Zero stays zero, so an origin pinned at 0 is preserved.
    """
    step = float(panel.grid.dt[0]) if dt is None else float(dt)
    if not step > 0:
        raise ConfigError("dt must be > 0")
    sd = _feature_std(np.diff(panel.data, axis=1))
    _require_positive(sd, "increment variance")
    tr = ScalingTransform("increment_rescale", step, sd / np.sqrt(step), np.zeros_like(sd))
    return Panel(tr.forward(panel.data), panel.grid), tr


def unscale_returns(returns: Panel | np.ndarray, transform: ScalingTransform) -> np.ndarray:
    data = returns.data if isinstance(returns, Panel) else np.asarray(returns, dtype=np.float64)
    return transform.inverse(data)


def returns_to_base_one(returns: Panel | np.ndarray, transform: ScalingTransform | None = None) -> np.ndarray:
    """Undo the rescale (if any) and compound returns into paths starting at exactly 1.

    Output has one more time step than the input.
    """
    data = returns.data if isinstance(returns, Panel) else np.asarray(returns, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if transform is not None and transform.mode != "identity":
        data = transform.inverse(data)
    m, _, d = data.shape
    logs = np.concatenate([np.zeros((m, 1, d)), np.cumsum(data, axis=1)], axis=1)
    return np.exp(logs)


def returns_to_path(returns: np.ndarray) -> np.ndarray:
    """Cumulative sum with a leading zero: one more time step than ``returns``."""
    r = np.asarray(returns, dtype=np.float64)
    return np.concatenate([np.zeros_like(r[:, :1]), np.cumsum(r, axis=1)], axis=1)


def path_to_returns(path: np.ndarray) -> np.ndarray:
    return np.diff(np.asarray(path, dtype=np.float64), axis=1)


def standardize(panel: Panel) -> tuple[Panel, ScalingTransform]:
    flat = panel.data.reshape(-1, panel.n_features)
    sd = _feature_std(panel.data)
    _require_positive(sd, "variance")
    tr = ScalingTransform("standardize", 1.0, sd, flat.mean(axis=0))
    return Panel(tr.forward(panel.data), panel.grid), tr


def min_max(panel: Panel) -> tuple[Panel, ScalingTransform]:
    flat = panel.data.reshape(-1, panel.n_features)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    _require_positive(hi - lo, "range")
    tr = ScalingTransform("min_max", 1.0, hi - lo, lo)
    return Panel(tr.forward(panel.data), panel.grid), tr


def identity(panel: Panel) -> tuple[Panel, ScalingTransform]:
    d = panel.n_features
    return panel, ScalingTransform("identity", 1.0, np.ones(d), np.zeros(d))


def fit_transform(panel: Panel, mode: str, dt: float | None = None) -> tuple[Panel, ScalingTransform]:
    """Dispatch on ``mode``.

    ``log_return_rescale`` takes prices and gives, on the same grid, the
    cumulative sum of rescaled log-returns starting at 0. Its increments are
    the rescaled returns, so they have std sqrt(dt) like the generator's
    unit-diffusion increments.
    """
    if mode == "log_return_rescale":
        step = float(panel.grid.dt[0]) if dt is None else dt
        out, tr = rescale_returns(to_log_returns(panel), step)
        path = Panel(returns_to_path(out.data), panel.grid)
        return path, ScalingTransform("log_return_rescale", tr.dt, tr.scale, tr.shift)
    if mode == "rescale":
        return rescale_returns(panel, float(panel.grid.dt[0]) if dt is None else dt)
    if mode == "increment_rescale":
        return rescale_increments(panel, dt)
    if mode == "standardize":
        return standardize(panel)
    if mode == "min_max":
        return min_max(panel)
    if mode == "identity":
        return identity(panel)
    raise ConfigError(f"unknown scaling mode {mode!r}")


def invert(data: np.ndarray, transform: ScalingTransform) -> np.ndarray:
    """Map model-space data back to the original space.

    For ``log_return_rescale`` ``data`` is a cumulative rescaled return path
    and the result is a price path starting at exactly 1 on the same grid.
    """
    if transform.mode == "log_return_rescale":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        return returns_to_base_one(path_to_returns(data), transform)
    if transform.mode == "identity":
        return np.asarray(data, dtype=np.float64)
    return transform.inverse(data)
