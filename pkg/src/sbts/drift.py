"""Kernel-estimated bridge drift.

For t in [t_i, t_{i+1}) the drift is a weighted average of the displacements
towards every reference sample's next grid value, divided by the time to go.
Weights combine the Gaussian bridge factor F_i with a product of quartic
kernels comparing the generated prefix to each reference over the last ``k``
grid points. All weights are formed in log space and normalised by their
maximum before exponentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ConfigError, DriftConfig, Panel


class DegenerateWeights(ArithmeticError):
    """No reference sample carries weight (every one lies outside the kernel support)."""


class SingularityError(ValueError):
    """Drift requested at or past the right end of its interval."""


def _check_bandwidths(h) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise ConfigError(f"bandwidths must be positive, got {h.tolist()}")
    return h


def quartic_kernel(u, h) -> float:
    """Product quartic kernel prod_k (1/h_k) (1 - (u_k/h_k)^2)^2 1{|u_k| < h_k}."""
    h = _check_bandwidths(h)
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), h.shape)
    r = u / h
    if np.any(np.abs(r) >= 1.0):
        return 0.0
    return float(np.prod((1.0 - r * r) ** 2 / h))


def log_quartic_kernel(u, h) -> float:
    h = _check_bandwidths(h)
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), h.shape)
    r = u / h
    if np.any(np.abs(r) >= 1.0):
        return -np.inf
    return float(np.sum(2.0 * np.log1p(-r * r) - np.log(h)))


def bridge_log_weight(t, x_i_ref, x, x_next_ref, t_i, t_next) -> float:
    """log F_i(t, x_i, x, x_{i+1}); exponentiation is left to the caller."""
    if not t < t_next:
        raise SingularityError(f"t={t} must be strictly before the interval end {t_next}")
    if t < t_i:
        raise ValueError(f"t={t} precedes the interval start {t_i}")
    x_i_ref, x, x_next_ref = (np.asarray(a, dtype=np.float64) for a in (x_i_ref, x, x_next_ref))
    to_go = np.sum((x_next_ref - x) ** 2)
    step = np.sum((x_next_ref - x_i_ref) ** 2)
    return float(-to_go / (2.0 * (t_next - t)) + step / (2.0 * (t_next - t_i)))


def markov_log_kernel_weight(prefix, reference, k: int, h) -> float:
    """Sum of log kernel factors over the last ``k`` rows of ``prefix``.

    ``reference`` is one sample's (N, d) trajectory; row j of the prefix is
    compared with row j of the reference. The window is clipped at the first row.
    """
    h = _check_bandwidths(h)
    if int(k) < 1:
        raise ConfigError("markov order must be >= 1")
    prefix = np.atleast_2d(np.asarray(prefix, dtype=np.float64))
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim == 1:
        reference = reference[:, None]
    i = prefix.shape[0]
    j0 = max(0, i - int(k))
    total = 0.0
    for j in range(j0, i):
        total += log_quartic_kernel(prefix[j] - reference[j], h)
        if total == -np.inf:
            break
    return total


@dataclass(frozen=True)
class DriftQuery:
    """Drift evaluation point inside grid interval ``interval_index`` (0-based).

    ``prefix`` holds the generated grid values up to and including that
    interval's left end, shape (interval_index + 1, d).
    """

    interval_index: int
    t: float
    x: np.ndarray
    prefix: np.ndarray


def log_weights(query: DriftQuery, reference: Panel, cfg: DriftConfig, bandwidths=None) -> np.ndarray:
    """Per-reference log(F_i * K~) for ``query``; ``-inf`` marks excluded samples."""
    data = reference.data
    times = reference.grid.times
    i = int(query.interval_index)
    n = times.size
    if not 0 <= i < n - 1:
        raise ConfigError(f"interval_index {i} outside [0, {n - 2}]")
    t_i, t_next = times[i], times[i + 1]
    t = float(query.t)
    if not t < t_next:
        raise SingularityError(f"t={t} must be strictly before the interval end {t_next}")
    if t < t_i:
        raise ValueError(f"t={t} precedes the interval start {t_i}")
    d = data.shape[2]
    prefix = np.atleast_2d(np.asarray(query.prefix, dtype=np.float64))
    if prefix.shape != (i + 1, d):
        raise ConfigError(f"prefix must have shape {(i + 1, d)}, got {prefix.shape}")
    x = np.asarray(query.x, dtype=np.float64).reshape(d)
    h = cfg.bandwidths_for(d) if bandwidths is None else _check_bandwidths(bandwidths)
    k = cfg.order_for(n)
    j0 = max(0, i + 1 - k)
    logk = kernels.log_window_kernel(np.ascontiguousarray(prefix), data, j0, i + 1, h)
    nxt = data[:, i + 1, :]
    step = np.sum((nxt - data[:, i, :]) ** 2, axis=1) / (2.0 * (t_next - t_i))
    to_go = np.sum((nxt - x) ** 2, axis=1) / (2.0 * (t_next - t))
    return logk + step - to_go


def estimate_drift(query: DriftQuery, reference: Panel, cfg: DriftConfig, bandwidths=None) -> np.ndarray:
    """Kernel estimate of the bridge drift at ``query``.

    Raises :class:`DegenerateWeights` when no reference sample has positive
    weight; the sampler decides on a fallback.
    """
    logw = log_weights(query, reference, cfg, bandwidths)
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeights("all reference samples lie outside the kernel support")
    w = np.exp(logw - top)
    mass = w.sum()
    if mass < cfg.weight_floor:
        raise DegenerateWeights(f"total weight {mass!r} below floor {cfg.weight_floor!r}")
    i = int(query.interval_index)
    t_next = reference.grid.times[i + 1]
    x = np.asarray(query.x, dtype=np.float64).reshape(-1)
    disp = reference.data[:, i + 1, :] - x
    return (w @ disp) / mass / (t_next - float(query.t))
