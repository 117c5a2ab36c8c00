"""Euler-Maruyama generation of bridge paths and of conditional terminal values."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    ConfigError,
    DriftConfig,
    GenerationConfig,
    Panel,
    TimeGrid,
    check_panel,
    stream,
)

log = logging.getLogger(__name__)

#: bandwidth doublings tried before falling back to unconditional weights
MAX_DOUBLINGS = 3

# stream tags, kept distinct so that no two uses share random numbers
_PATH_STREAM = 1
_TERMINAL_STREAM = 2

_CHUNK = 64


@dataclass(frozen=True, eq=False)
class GeneratedPanel:
    data: np.ndarray
    grid: TimeGrid
    seed: int
    drift: DriftConfig
    reference_hash: str
    fallback_counts: np.ndarray
    backend: str = field(default_factory=lambda: "numba" if kernels.USE_NUMBA else "numpy")

    @property
    def panel(self) -> Panel:
        return Panel(self.data, self.grid)

    def provenance_ndjson(self) -> str:
        lines = [
            json.dumps({"path": i, "seed": int(self.seed), "fallback_count": int(c)})
            for i, c in enumerate(self.fallback_counts)
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def provenance(self) -> dict:
        return {
            "seed": int(self.seed),
            "drift": self.drift.to_dict(),
            "reference_hash": self.reference_hash,
            "fallback_total": int(self.fallback_counts.sum()),
            "backend": self.backend,
        }


def conditioning_weights(prefix, ref, j0, j1, h):
    """Log K~ per reference, walking the fallback ladder if nothing is in support.

    Returns ``(logk, engaged)``; ``engaged`` is True when the configured
    bandwidths gave zero total mass. After ``MAX_DOUBLINGS`` doublings the
    weights become uniform, leaving pure bridge weighting.
    """
    logk = kernels.log_window_kernel(prefix, ref, j0, j1, h)
    if np.isfinite(logk).any():
        return logk, False
    for r in range(1, MAX_DOUBLINGS + 1):
        logk = kernels.log_window_kernel(prefix, ref, j0, j1, h * 2.0**r)
        if np.isfinite(logk).any():
            return logk, True
    return np.zeros(ref.shape[0]), True


def _step_terms(ref: np.ndarray, times: np.ndarray) -> np.ndarray:
    """|X_{i+1} - X_i|^2 / (2 dt_i) for every reference and interval, shape (M, N-1)."""
    inc = np.diff(ref, axis=1)
    return np.einsum("mif,mif->mi", inc, inc) / (2.0 * np.diff(times))[None, :]


def _interval(ref, steps, logk, i, x0, t0, t1, z, noise_scale):
    active = np.flatnonzero(np.isfinite(logk))
    ref_next = np.ascontiguousarray(ref[active, i + 1, :])
    base = logk[active] + steps[active, i]
    return kernels.bridge_interval(ref_next, base, x0, t0, t1, z, noise_scale)


def _one_path(ref, steps, times, h, k, n_sub, noise_scale, start, rng):
    _, n, d = ref.shape
    out = np.empty((n, d))
    out[0] = start
    z = rng.standard_normal((n - 1, 1, n_sub, d))
    fallbacks = 0
    for i in range(n - 1):
        j0 = max(0, i + 1 - k)
        logk, engaged = conditioning_weights(out, ref, j0, i + 1, h)
        fallbacks += engaged
        out[i + 1] = _interval(ref, steps, logk, i, out[i], times[i], times[i + 1], z[i], noise_scale)[0]
    return out, fallbacks


def _pool_map(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def generate_paths(
    reference: Panel,
    drift_cfg: DriftConfig,
    gen_cfg: GenerationConfig,
    threads: int | None = None,
) -> GeneratedPanel:
    """Simulate ``gen_cfg.num_paths`` trajectories on the reference grid.

    Each path starts at ``gen_cfg.start`` (zeros by default) at the first grid
    time and takes ``grid.substeps_per_interval`` Euler steps per interval. The
    conditioning prefix is the recorded grid values. Path ``l`` draws its
    normals from the stream keyed by (seed, l), so output does not depend on
    ``threads``.
    """
    check_panel(reference)
    ref = reference.data
    _, n, d = ref.shape
    times = reference.grid.times
    h = drift_cfg.bandwidths_for(d)
    k = drift_cfg.order_for(n)
    n_sub = reference.grid.substeps_per_interval
    start = np.zeros(d) if gen_cfg.start is None else np.asarray(gen_cfg.start, dtype=np.float64)
    if start.shape != (d,):
        raise ConfigError(f"start must have {d} entries")
    steps = _step_terms(ref, times)
    num = int(gen_cfg.num_paths)

    def run(block):
        lo, hi = block
        res = [
            _one_path(ref, steps, times, h, k, n_sub, gen_cfg.noise_scale, start,
                      stream(gen_cfg.seed, _PATH_STREAM, p))
            for p in range(lo, hi)
        ]
        return res

    blocks = [(lo, min(lo + _CHUNK, num)) for lo in range(0, num, _CHUNK)]
    results = [r for chunk in _pool_map(run, blocks, threads) for r in chunk]
    data = np.stack([r[0] for r in results])
    counts = np.array([r[1] for r in results], dtype=np.int64)
    if counts.any():
        log.info("fallback ladder engaged on %d of %d paths", int((counts > 0).sum()), num)
    return GeneratedPanel(
        data=data,
        grid=reference.grid,
        seed=int(gen_cfg.seed),
        drift=drift_cfg,
        reference_hash=reference.digest(),
        fallback_counts=counts,
    )


@dataclass(frozen=True, eq=False)
class ConditionalTerminals:
    values: np.ndarray  # (L, d)
    fallback_count: int


def conditional_terminals(
    prefix,
    reference: Panel,
    drift_cfg: DriftConfig,
    num: int,
    seed: int,
    noise_scale: float = 1.0,
    start=None,
    _steps=None,
) -> ConditionalTerminals:
    """L draws of the last grid value given the first N-1 real values.

    Integration runs over the final interval only, from ``start`` (the last
    prefix row by default). The conditioning weights do not depend on the
    realization, so either all L draws engage the fallback ladder or none.
    """
    ref = reference.data
    _, n, d = ref.shape
    prefix = np.ascontiguousarray(np.asarray(prefix, dtype=np.float64).reshape(-1, d))
    if prefix.shape[0] != n - 1:
        raise ConfigError(f"prefix must have {n - 1} rows, got {prefix.shape[0]}")
    if int(num) < 1:
        raise ConfigError("number of realizations must be >= 1")
    times = reference.grid.times
    h = drift_cfg.bandwidths_for(d)
    k = drift_cfg.order_for(n)
    n_sub = reference.grid.substeps_per_interval
    i = n - 2
    logk, engaged = conditioning_weights(prefix, ref, max(0, i + 1 - k), i + 1, h)
    steps = _step_terms(ref[:, -2:, :], times[-2:])[:, :1] if _steps is None else _steps
    x0 = prefix[-1] if start is None else np.asarray(start, dtype=np.float64).reshape(d)
    z = np.empty((int(num), n_sub, d))
    for l in range(int(num)):
        z[l] = stream(seed, _TERMINAL_STREAM, l).standard_normal((n_sub, d))
    active = np.flatnonzero(np.isfinite(logk))
    base = logk[active] + steps[active, -1]
    ref_next = np.ascontiguousarray(ref[active, -1, :])
    values = kernels.bridge_interval(ref_next, base, x0, times[-2], times[-1], z, noise_scale)
    return ConditionalTerminals(np.asarray(values), int(num) if engaged else 0)


def generate_conditional_terminals(prefix, reference: Panel, drift_cfg: DriftConfig, L: int, seed: int,
                                   noise_scale: float = 1.0, start=None) -> np.ndarray:
    """(L, d) terminal draws; see :func:`conditional_terminals` for the fallback count."""
    return conditional_terminals(prefix, check_panel(reference), drift_cfg, L, seed, noise_scale, start).values
