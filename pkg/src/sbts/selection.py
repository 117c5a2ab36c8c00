"""Joint grid search of bandwidth and Markov order by conditional-terminal MSE.

For a candidate (h, k) every test series q gets L draws of its last value
given its first N-1 real values; the score is the mean over q of the squared
Euclidean distance between the average draw and the real last value.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, DriftConfig, Panel, check_panel, derive_seed
from .sampler import _step_terms, conditional_terminals

#: cells whose fallback rate exceeds this are unreliable
UNRELIABLE_RATE = 0.5
#: relative gap below which two cell MSEs are treated as equal
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    bandwidth_grid: tuple
    order_grid: tuple = (1,)
    realizations_per_test: int = 50
    seed: int = 0
    test_fraction: float = 0.2
    max_test: int | None = None
    noise_scale: float = 1.0

    def __post_init__(self):
        hs = tuple(self.bandwidth_grid)
        ks = tuple(self.order_grid)
        if not hs or not ks:
            raise ConfigError("bandwidth and order grids must be non-empty")
        for h in hs:
            arr = np.atleast_1d(np.asarray(h, dtype=np.float64))
            if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
                raise ConfigError(f"bandwidth candidates must be positive, got {h!r}")
        for k in ks:
            if k != "full" and (isinstance(k, str) or int(k) != k or int(k) < 1):
                raise ConfigError(f"order candidates must be positive integers or 'full', got {k!r}")
        if int(self.realizations_per_test) < 1:
            raise ConfigError("realizations_per_test must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        object.__setattr__(self, "bandwidth_grid", hs)
        object.__setattr__(self, "order_grid", ks)


def _h_key(h):
    a = np.atleast_1d(np.asarray(h, dtype=np.float64))
    return float(a[0]) if a.size == 1 else tuple(float(v) for v in a)


def _order_rank(k, n):
    return n if k == "full" else int(k)


@dataclass
class SelectionReport:
    bandwidths: list
    orders: list
    mse: np.ndarray  # (len(bandwidths), len(orders))
    fallback_rate: np.ndarray
    chosen: tuple
    n_times: int

    @property
    def unreliable(self) -> np.ndarray:
        return self.fallback_rate > UNRELIABLE_RATE

    @property
    def mse_table(self) -> dict:
        return {(_h_key(h), k): float(self.mse[a, b])
                for a, h in enumerate(self.bandwidths) for b, k in enumerate(self.orders)}

    def best_for_order(self, k):
        """Chosen bandwidth when the order is fixed to ``k`` (same tie and reliability rules)."""
        b = self.orders.index(k)
        a = _argmin(self.mse[:, b:b + 1], self.fallback_rate[:, b:b + 1], self.bandwidths, [k], self.n_times)[0]
        return self.bandwidths[a]

    def drift_config(self, d: int) -> DriftConfig:
        h, k = self.chosen
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        return DriftConfig(np.full(d, h[0]) if h.size == 1 else h, k)

    def rows(self):
        for a, h in enumerate(self.bandwidths):
            for b, k in enumerate(self.orders):
                yield _h_key(h), k, float(self.mse[a, b]), float(self.fallback_rate[a, b])

    def table_csv(self) -> str:
        lines = ["h,k,mse,fallback_rate"]
        for h, k, mse, fr in self.rows():
            hs = ";".join(repr(v) for v in h) if isinstance(h, tuple) else repr(h)
            lines.append(f"{hs},{k},{mse!r},{fr!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        h, k = self.chosen
        return {
            "chosen": {"h": _h_key(h), "k": k},
            "table": [
                {"h": h_, "k": k_, "mse": m_, "fallback_rate": f_, "unreliable": f_ > UNRELIABLE_RATE}
                for h_, k_, m_, f_ in self.rows()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _argmin(mse, rate, hs, ks, n):
    """Index of the minimum MSE, restricted to reliable cells when any exist.

    Values within ``TIE_RTOL`` of the minimum count as ties, which go to the
    smaller bandwidth, then the smaller order.
    """
    reliable = rate <= UNRELIABLE_RATE
    pool = reliable if reliable.any() else np.ones_like(reliable)
    best_val = float(np.min(mse[pool]))
    cutoff = best_val + TIE_RTOL * (1.0 + abs(best_val))
    best = None
    for a in range(mse.shape[0]):
        for b in range(mse.shape[1]):
            if not pool[a, b] or mse[a, b] > cutoff:
                continue
            key = (float(np.max(np.atleast_1d(hs[a]))), _order_rank(ks[b], n), mse[a, b])
            if best is None or key < best[0]:
                best = (key, (a, b))
    return best[1]


def select(train: Panel, test: Panel, cfg: SelectionConfig, weight_floor: float = 1e-300,
           threads: int | None = None) -> SelectionReport:
    check_panel(train)
    check_panel(test)
    if train.grid != test.grid or train.n_features != test.n_features:
        raise ConfigError("train and test panels must share grid and feature count")
    _, n, d = train.shape
    q_count = test.n_samples
    hs = [np.atleast_1d(np.asarray(h, dtype=np.float64)) for h in cfg.bandwidth_grid]
    hs = [np.full(d, h[0]) if h.size == 1 else h for h in hs]
    ks = list(cfg.order_grid)
    steps = _step_terms(train.data[:, -2:, :], train.grid.times[-2:])
    L = int(cfg.realizations_per_test)

    def cell(ab):
        a, b = ab
        dc = DriftConfig(hs[a], ks[b], weight_floor)
        err = 0.0
        fb = 0
        for q in range(q_count):
            res = conditional_terminals(test.data[q, :-1], train, dc, L, derive_seed(cfg.seed, a, b, q),
                                        cfg.noise_scale, _steps=steps)
            diff = res.values.mean(axis=0) - test.data[q, -1]
            err += float(diff @ diff)
            fb += res.fallback_count
        return err / q_count, fb / (q_count * L)

    cells = [(a, b) for a in range(len(hs)) for b in range(len(ks))]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(cell, cells))
    else:
        out = [cell(c) for c in cells]
    mse = np.empty((len(hs), len(ks)))
    rate = np.empty_like(mse)
    for (a, b), (m, r) in zip(cells, out):
        mse[a, b], rate[a, b] = m, r
    a, b = _argmin(mse, rate, hs, ks, n)
    chosen_h = list(cfg.bandwidth_grid)[a]
    return SelectionReport(list(cfg.bandwidth_grid), ks, mse, rate, (chosen_h, ks[b]), n)


def split(panel: Panel, test_fraction: float, seed: int, max_test: int | None = None) -> tuple[Panel, Panel]:
    """Random train/test split of the samples."""
    m = panel.n_samples
    n_test = max(1, int(round(m * test_fraction)))
    if max_test is not None:
        n_test = min(n_test, int(max_test))
    if n_test >= m:
        raise ConfigError("need at least one training sample")
    order = np.random.default_rng(np.random.SeedSequence(int(seed))).permutation(m)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return panel.subset(train_idx), panel.subset(test_idx)


def select_split(panel: Panel, cfg: SelectionConfig, seed: int | None = None,
                 threads: int | None = None) -> SelectionReport:
    train, test = split(panel, cfg.test_fraction, cfg.seed if seed is None else seed, cfg.max_test)
    return select(train, test, cfg, threads=threads)
