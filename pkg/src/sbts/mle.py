"""Maximum-likelihood calibration of OU and Heston, and the real-vs-synthetic robustness experiment."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .core import ConfigError, DriftConfig, GenerationConfig, Panel, TimeGrid, anchor, derive_seed, stream, strip_anchor
from .scaling import ScalingTransform, rescale_increments
from .optimize import BoxTransform, nelder_mead
from .simulators import (
    HESTON_RANGES,
    OU_RANGES,
    HestonParams,
    OUParams,
    ParamRanges,
    sample_params,
    simulate_heston,
    simulate_ou,
)

log = logging.getLogger(__name__)

#: returned instead of a non-finite likelihood; exceeds any feasible value met in practice
PENALTY = 1e300

OU_NAMES = ("theta", "mu", "sigma")
HESTON_NAMES = ("kappa", "theta", "xi", "rho", "r")


def _dts(grid, n):
    if grid is None:
        raise ConfigError("a time grid is required")
    if isinstance(grid, TimeGrid):
        dts = grid.dt
    else:
        dts = np.broadcast_to(np.asarray(grid, dtype=np.float64), (n - 1,))
    if dts.size != n - 1:
        raise ConfigError(f"grid has {dts.size + 1} times for a series of length {n}")
    return dts


def ou_nll(params: OUParams | tuple, series, grid) -> float:
    """Exact-transition negative log-likelihood of one OU series.

    ``grid`` is a TimeGrid or a scalar/array of time steps.
    """
    theta, mu, sigma = (params.theta, params.mu, params.sigma) if isinstance(params, OUParams) else params
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    dts = _dts(grid, x.size)
    if not (theta > 0 and sigma > 0):
        return PENALTY
    with np.errstate(all="ignore"):
        decay = np.exp(-theta * dts)
        mean = x[:-1] * decay + mu * (1.0 - decay)
        var = sigma * sigma * (-np.expm1(-2.0 * theta * dts)) / (2.0 * theta)
        val = float(np.sum(0.5 * np.log(2.0 * np.pi * var) + (x[1:] - mean) ** 2 / (2.0 * var)))
    if not math.isfinite(val) or np.any(var <= 0):
        return PENALTY
    return val


def heston_nll(params: HestonParams | tuple, series, grid) -> float:
    """Bivariate Gaussian negative log-likelihood of one (X, v) series.

    Transition i uses Y = (log X_{i+1}/X_i, v_{i+1} - v_i) with mean
    ((r - v_i/2) dt, kappa (theta - v_i) dt) and covariance
    v_i dt [[1, rho xi], [rho xi, xi^2]].
    """
    if isinstance(params, HestonParams):
        kappa, theta, xi, rho, r = params.kappa, params.theta, params.xi, params.rho, params.r
    else:
        kappa, theta, xi, rho, r = params
    s = np.asarray(series, dtype=np.float64)
    dts = _dts(grid, s.shape[0])
    x, v = s[:, 0], s[:, 1]
    vt = v[:-1]
    if np.any(x <= 0) or np.any(vt <= 0) or not (xi > 0) or not (abs(rho) < 1):
        return PENALTY
    with np.errstate(all="ignore"):
        y1 = np.log(x[1:] / x[:-1]) - (r - 0.5 * vt) * dts
        y2 = (v[1:] - vt) - kappa * (theta - vt) * dts
        a = vt * dts
        b = rho * xi * vt * dts
        c = xi * xi * vt * dts
        det = a * c - b * b
        quad = (c * y1 * y1 - 2.0 * b * y1 * y2 + a * y2 * y2) / det
        val = float(np.sum(0.5 * np.log(4.0 * np.pi**2 * det) + 0.5 * quad))
    if not math.isfinite(val) or np.any(det <= 0):
        return PENALTY
    return val


def heston_levels(features: np.ndarray, x0: float = 1.0) -> np.ndarray:
    """(log-return, v) features -> (X, v) levels; the first return is ignored."""
    f = np.asarray(features, dtype=np.float64)
    out = np.empty_like(f)
    out[..., 0] = x0 * np.exp(np.cumsum(f[..., 0], axis=-1) - f[..., :1, 0])
    out[..., 1] = f[..., 1]
    return out


@dataclass
class FitResult:
    params: object
    nll: float
    converged: bool
    iterations: int


def fit(nll: Callable[[np.ndarray], float], initial, bounds, restarts=(), xtol=1e-8, max_iter=2000):
    """Minimise ``nll`` over the box ``bounds`` from ``initial`` and each of ``restarts``.

    Returns ``(x, FitResult-like tuple)`` of the best start: ``(x, nll, converged, iterations)``.
    """
    tr = BoxTransform(bounds)

    def obj(u):
        return nll(tr.to_box(u))

    best = None
    for start in (initial, *restarts):
        res = nelder_mead(obj, tr.from_box(np.asarray(start, dtype=np.float64)), step=0.5, xtol=xtol,
                          max_iter=max_iter)
        if best is None or res.fun < best[1]:
            best = (tr.to_box(res.x), res.fun, res.converged, res.iterations)
    x, val, conv, its = best
    return x, val, bool(conv and val < PENALTY), its


OU_BOUNDS = [(0.0, None), (None, None), (0.0, None)]
HESTON_BOUNDS = [(0.0, None), (0.0, None), (0.0, None), (-1.0, 1.0), (None, None)]


def _midpoint(ranges: dict, names) -> np.ndarray:
    return np.array([0.5 * (ranges[n][0] + ranges[n][1]) for n in names])


def _random_starts(ranges: dict, names, count, rng) -> list:
    return [np.array([rng.uniform(*ranges[n]) for n in names]) for _ in range(count)]


def fit_ou(series, grid, restarts: int = 3, seed: int = 0, ranges: dict = OU_RANGES) -> FitResult:
    rng = stream(seed, 31)
    x, val, conv, its = fit(
        lambda p: ou_nll(tuple(p), series, grid),
        _midpoint(ranges, OU_NAMES),
        OU_BOUNDS,
        _random_starts(ranges, OU_NAMES, restarts, rng),
    )
    return FitResult(OUParams(*(float(v) for v in x)), val, conv, its)


def fit_heston(series, grid, restarts: int = 3, seed: int = 0, ranges: dict = HESTON_RANGES) -> FitResult:
    rng = stream(seed, 32)
    x, val, conv, its = fit(
        lambda p: heston_nll(tuple(p), series, grid),
        _midpoint(ranges, HESTON_NAMES),
        HESTON_BOUNDS,
        _random_starts(ranges, HESTON_NAMES, restarts, rng),
    )
    s = np.asarray(series)
    return FitResult(HestonParams(*(float(v) for v in x), v0=float(max(s[0, 1], 1e-12)), x0=float(s[0, 0])),
                     val, conv, its)


def fit_panel(process: str, data: np.ndarray, grid, restarts: int = 3, seed: int = 0,
              threads: int | None = None) -> list[FitResult]:
    """Fit every series of ``data`` (M, N, d) independently; results in series order."""
    if process == "ou":
        def job(m):
            return fit_ou(data[m, :, 0], grid, restarts, derive_seed(seed, m))
    elif process == "heston":
        def job(m):
            return fit_heston(data[m], grid, restarts, derive_seed(seed, m))
    else:
        raise ConfigError(f"unknown process {process!r}")
    idx = range(data.shape[0])
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, idx))
    return [job(m) for m in idx]


# ---------------------------------------------------------------------------
# robustness experiment
# ---------------------------------------------------------------------------


def clipped(values: np.ndarray, lo: float = 1.0, hi: float = 99.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return values
    a, b = np.percentile(values, [lo, hi])
    return values[(values >= a) & (values <= b)]


def summarize(values: np.ndarray) -> dict:
    c = clipped(values)
    if c.size == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(c, [25, 50, 75])
    return {
        "n": int(c.size),
        "mean": float(c.mean()),
        "std": float(c.std(ddof=1)) if c.size > 1 else 0.0,
        "median": float(med),
        "iqr": float(q3 - q1),
        "p01": float(np.percentile(values[np.isfinite(values)], 1)),
        "p99": float(np.percentile(values[np.isfinite(values)], 99)),
    }


@dataclass
class RobustnessReport:
    process: str
    names: tuple
    real: dict  # name -> array of estimates, one per real series
    synthetic: dict
    truth: dict | None = None
    drift: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def summaries(self) -> dict:
        out = {}
        for n in self.names:
            r, s = summarize(self.real[n]), summarize(self.synthetic[n])
            entry = {"real": r, "synthetic": s}
            if r.get("n") and s.get("n"):
                entry["median_diff"] = s["median"] - r["median"]
                entry["iqr_ratio"] = s["iqr"] / r["iqr"] if r["iqr"] > 0 else None
            out[n] = entry
        return out

    def to_dict(self) -> dict:
        return {
            "process": self.process,
            "truth": self.truth,
            "drift": self.drift,
            "summaries": self.summaries(),
            "diagnostics": self.diagnostics,
            "n_real": int(len(self.real[self.names[0]])),
            "n_synthetic": int(len(self.synthetic[self.names[0]])),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def histogram_csv(self, name: str, bins: int = 40) -> str:
        r = clipped(self.real[name])
        s = clipped(self.synthetic[name])
        both = np.concatenate([r, s])
        if both.size == 0:
            return "bin_left,bin_right,real,synthetic\n"
        edges = np.histogram_bin_edges(both, bins=bins)
        hr, _ = np.histogram(r, edges)
        hs, _ = np.histogram(s, edges)
        rows = ["bin_left,bin_right,real,synthetic"]
        rows += [f"{edges[i]!r},{edges[i + 1]!r},{int(hr[i])},{int(hs[i])}" for i in range(bins)]
        return "\n".join(rows) + "\n"


def _estimates(fits: list[FitResult], names) -> dict:
    return {n: np.array([getattr(f.params, n) if f.converged else np.nan for f in fits]) for n in names}


def robustness_scaling(process: str, real: Panel) -> ScalingTransform:
    """Per-feature scale putting the generator's unit-diffusion increments on the data's scale.

    OU levels and the Heston variance use their one-step increments; the
    Heston log-return feature uses its own values (skipping the zero first return).
    """
    dt = float(real.grid.dt[0])
    if process == "ou":
        return rescale_increments(real, dt)[1]
    ret_sd = real.data[:, 1:, 0].std(ddof=1)
    var_sd = np.diff(real.data[:, :, 1], axis=1).std(ddof=1)
    if not (ret_sd > 0 and var_sd > 0):
        raise ConfigError("Heston panel has a constant feature")
    scale = np.array([ret_sd, var_sd]) / math.sqrt(dt)
    return ScalingTransform("rescale", dt, scale, np.zeros(2))


def robustness_model_panel(process: str, real: Panel, transform: ScalingTransform | None = None) -> Panel:
    """Panel the generator works on: scaled series, anchored at zero unless they already start there."""
    if transform is not None:
        real = Panel(transform.forward(real.data), real.grid)
    if process == "ou" and np.all(real.data[:, 0, :] == 0.0):
        return real
    return anchor(real)


def run_robustness(
    process: str,
    params,
    M: int,
    grid: TimeGrid,
    drift_cfg: DriftConfig | None = None,
    selection_cfg=None,
    seed: int = 0,
    restarts: int = 3,
    threads: int | None = None,
    x0: float = 0.0,
    rescale: bool = True,
) -> RobustnessReport:
    """Simulate real series, generate an equal number of bridge series, fit both by MLE.

    ``params`` is a fixed OUParams/HestonParams or a ParamRanges. When
    ``drift_cfg`` is None the bandwidth and Markov order are selected on a
    train/test split of the real panel with ``selection_cfg``. With
    ``rescale`` the generator runs on increment-rescaled data and its output
    is mapped back before fitting.
    """
    from . import sampler, selection

    if process not in ("ou", "heston"):
        raise ConfigError(f"unknown process {process!r}")
    names = OU_NAMES if process == "ou" else HESTON_NAMES
    if isinstance(params, ParamRanges):
        if params.kind != process:
            raise ConfigError(f"ranges are for {params.kind}, process is {process}")
        per_sample = sample_params(params, M, derive_seed(seed, 1))
        truth = None
    else:
        per_sample = params
        truth = asdict(params)

    sim_seed = derive_seed(seed, 2)
    if process == "ou":
        real = simulate_ou(per_sample, grid, M, sim_seed, x0=x0)
        real_series = real.data
    else:
        real = simulate_heston(per_sample, grid, M, sim_seed, output="returns").panel
        real_series = None

    transform = robustness_scaling(process, real) if rescale else None
    model_panel = robustness_model_panel(process, real, transform)
    anchored = model_panel.n_times != real.n_times
    diagnostics: dict = {}
    if drift_cfg is None:
        if selection_cfg is None:
            raise ConfigError("either a drift config or a selection config is required")
        report = selection.select_split(model_panel, selection_cfg, derive_seed(seed, 3))
        drift_cfg = report.drift_config(model_panel.n_features)
        diagnostics["selection"] = report.to_dict()

    gen = sampler.generate_paths(model_panel, drift_cfg, GenerationConfig(M, derive_seed(seed, 4)), threads=threads)
    diagnostics["fallback_total"] = int(gen.fallback_counts.sum())
    synth = gen.data[:, 1:] if anchored else gen.data
    if transform is not None:
        synth = transform.inverse(synth)
        diagnostics["scale"] = transform.scale.tolist()

    if process == "heston":
        x0h = per_sample.x0 if isinstance(per_sample, HestonParams) else 1.0
        real_series = heston_levels(real.data, x0h)
        synth = heston_levels(synth, x0h)

    real_fits = fit_panel(process, real_series, grid, restarts, derive_seed(seed, 5), threads)
    syn_fits = fit_panel(process, synth, grid, restarts, derive_seed(seed, 6), threads)
    diagnostics["real_converged"] = int(sum(f.converged for f in real_fits))
    diagnostics["synthetic_converged"] = int(sum(f.converged for f in syn_fits))
    return RobustnessReport(
        process=process,
        names=names,
        real=_estimates(real_fits, names),
        synthetic=_estimates(syn_fits, names),
        truth=truth,
        drift=drift_cfg.to_dict(),
        diagnostics=diagnostics,
    )
