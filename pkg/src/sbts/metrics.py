"""Evaluation scores for generated panels.

Autocorrelation and cross-correlation scores compare pooled correlation
statistics of two panels; ONND is the mean distance from each generated series
to its nearest real series; the two-sample proxy replaces a trained
discriminator with leave-one-out 1-nearest-neighbour accuracy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import ks_2samp

from .core import ConfigError, Panel

log = logging.getLogger(__name__)


def _arr(p) -> np.ndarray:
    a = p.data if isinstance(p, Panel) else np.asarray(p, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return a


def default_max_lag(n_times: int) -> int:
    return min(n_times - 1, 10)


def autocorrelations(panel, max_lag: int) -> np.ndarray:
    """Per-feature autocorrelation at lags 1..max_lag, shape (max_lag, d).

    Each series is centred by the pooled per-time mean; covariances at a lag
    are averaged over samples and start times and normalised by the pooled
    variance. Constant features give NaN.
    """
    x = _arr(panel)
    m, n, d = x.shape
    if not 1 <= max_lag < n:
        raise ConfigError(f"max_lag must lie in [1, {n - 1}]")
    c = x - x.mean(axis=0, keepdims=True)
    var = np.mean(c * c, axis=(0, 1))
    out = np.empty((max_lag, d))
    with np.errstate(invalid="ignore", divide="ignore"):
        for lag in range(1, max_lag + 1):
            a, b = c[:, :-lag], c[:, lag:]
            cov = np.mean(a * b, axis=(0, 1))
            sa = np.sqrt(np.mean(a * a, axis=(0, 1)))
            sb = np.sqrt(np.mean(b * b, axis=(0, 1)))
            out[lag - 1] = np.where(var > 0, cov / (sa * sb), np.nan)
    return out


def autocorrelation_score(real, gen, max_lag: int | None = None) -> float:
    """Mean |acf_real - acf_gen| over features and lags 1..max_lag."""
    r, g = _arr(real), _arr(gen)
    if r.shape[1:] != g.shape[1:]:
        raise ConfigError(f"panels differ in (N, d): {r.shape[1:]} vs {g.shape[1:]}")
    lag = default_max_lag(r.shape[1]) if max_lag is None else int(max_lag)
    diff = np.abs(autocorrelations(r, lag) - autocorrelations(g, lag))
    keep = np.all(np.isfinite(diff), axis=0)
    if not keep.all():
        log.warning("excluding constant features %s", np.flatnonzero(~keep).tolist())
    if not keep.any():
        raise ConfigError("no non-degenerate feature to score")
    return float(diff[:, keep].mean())


def feature_correlation(panel) -> np.ndarray:
    x = _arr(panel)
    flat = x.reshape(-1, x.shape[2])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.corrcoef(flat, rowvar=False)


def cross_correlation_score(real, gen) -> float:
    """Mean |corr_real - corr_gen| over off-diagonal contemporaneous feature pairs."""
    r, g = _arr(real), _arr(gen)
    d = r.shape[2]
    if d < 2:
        raise ConfigError("cross-correlation needs at least 2 features")
    if g.shape[2] != d:
        raise ConfigError("panels differ in feature count")
    diff = np.abs(feature_correlation(r) - feature_correlation(g))
    iu = np.triu_indices(d, 1)
    vals = diff[iu]
    keep = np.isfinite(vals)
    if not keep.all():
        log.warning("excluding %d pairs involving constant features", int((~keep).sum()))
    if not keep.any():
        raise ConfigError("no non-degenerate feature pair to score")
    return float(vals[keep].mean())


def onnd(real, gen) -> float:
    """Mean Euclidean distance from each generated series to its nearest real series."""
    r, g = _arr(real), _arr(gen)
    if r.shape[1:] != g.shape[1:]:
        raise ConfigError(f"panels differ in (N, d): {r.shape[1:]} vs {g.shape[1:]}")
    tree = cKDTree(r.reshape(r.shape[0], -1))
    dist, _ = tree.query(g.reshape(g.shape[0], -1), k=1)
    return float(np.mean(dist))


def marginal_ks(real, gen, t_index: int, feature: int) -> float:
    r, g = _arr(real), _arr(gen)
    return float(ks_2samp(r[:, t_index, feature], g[:, t_index, feature]).statistic)


def two_sample_proxy(real, gen) -> float:
    """|acc - 0.5| of leave-one-out 1-NN classification of pooled real/generated series."""
    r, g = _arr(real), _arr(gen)
    x = np.concatenate([r.reshape(r.shape[0], -1), g.reshape(g.shape[0], -1)])
    y = np.concatenate([np.zeros(r.shape[0], dtype=bool), np.ones(g.shape[0], dtype=bool)])
    tree = cKDTree(x)
    # second neighbour excludes the point itself; exact duplicates resolve by index
    dist, idx = tree.query(x, k=2)
    self_first = idx[:, 0] == np.arange(x.shape[0])
    nn = np.where(self_first, idx[:, 1], idx[:, 0])
    acc = float(np.mean(y[nn] == y))
    return abs(acc - 0.5)


@dataclass
class MetricReport:
    scores: dict
    stds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    acf_real: np.ndarray | None = None
    acf_gen: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"scores": self.scores, "stds": self.stds, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def per_lag_csv(self) -> str:
        lines = ["lag,feature,acf_real,acf_gen"]
        if self.acf_real is not None:
            for lag in range(self.acf_real.shape[0]):
                for f in range(self.acf_real.shape[1]):
                    lines.append(f"{lag + 1},{f},{self.acf_real[lag, f]!r},{self.acf_gen[lag, f]!r}")
        return "\n".join(lines) + "\n"


def evaluate(real, gen, max_lag: int | None = None, runs: int = 1, seed: int = 0) -> MetricReport:
    """All scores; with ``runs > 1`` each score is also computed on ``runs``
    disjoint subsets of the generated panel to give a spread."""
    r, g = _arr(real), _arr(gen)
    lag = default_max_lag(r.shape[1]) if max_lag is None else int(max_lag)

    def scores(gp):
        out = {
            "autocorrelation": autocorrelation_score(r, gp, lag),
            "onnd": onnd(r, gp),
            "two_sample_proxy": two_sample_proxy(r, gp),
            "marginal_ks_last": float(np.mean([marginal_ks(r, gp, -1, f) for f in range(r.shape[2])])),
        }
        if r.shape[2] >= 2:
            out["cross_correlation"] = cross_correlation_score(r, gp)
        return out

    full = scores(g)
    stds = {}
    if runs > 1:
        order = np.random.default_rng(seed).permutation(g.shape[0])
        parts = [scores(g[idx]) for idx in np.array_split(order, runs)]
        stds = {k: float(np.std([p[k] for p in parts], ddof=1)) for k in full}
    return MetricReport(
        scores=full,
        stds=stds,
        config={"max_lag": lag, "runs": runs, "seed": seed},
        acf_real=autocorrelations(r, lag),
        acf_gen=autocorrelations(g, lag),
    )
