"""Toy and robustness datasets: OU, Heston, GARCH(2), sine, AR, fBM.

Sample ``m`` of every simulator draws from its own stream keyed by
(seed, m), so a panel's first rows do not change when M grows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.linalg import cholesky

from .core import ConfigError, Panel, TimeGrid, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OUParams:
    theta: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigError("OU theta must be > 0")
        if not self.sigma >= 0:
            raise ConfigError("OU sigma must be >= 0")


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    xi: float
    rho: float
    r: float
    v0: float | None = None
    x0: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.theta > 0 and self.xi > 0):
            raise ConfigError("Heston kappa, theta and xi must be > 0")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError("Heston rho must lie in [-1, 1]")
        if self.v0 is None:
            object.__setattr__(self, "v0", float(self.theta))
        if not (self.v0 > 0 and self.x0 > 0):
            raise ConfigError("Heston v0 and x0 must be > 0")


OU_FIXED = OUParams(theta=1.5, mu=1.0, sigma=0.3)
HESTON_FIXED = HestonParams(kappa=3.0, theta=0.5, xi=0.7, rho=0.7, r=0.02)

OU_RANGES = {"theta": (0.5, 2.5), "mu": (0.5, 1.5), "sigma": (0.1, 0.5)}
HESTON_RANGES = {
    "kappa": (0.5, 4.0),
    "theta": (0.5, 1.5),
    "xi": (0.01, 0.9),
    "rho": (-0.9, 0.9),
    "r": (0.02, 0.1),
}

GARCH_COEFFS = (5.0, 0.4, 0.1)
GARCH_EPS_VAR = 0.1
GARCH_BURN_IN = 50


@dataclass(frozen=True)
class ParamRanges:
    kind: str  # "ou" | "heston"
    bounds: dict

    def __post_init__(self):
        cls = _PARAM_CLASSES.get(self.kind)
        if cls is None:
            raise ConfigError(f"unknown process {self.kind!r}")
        names = {f.name for f in fields(cls) if f.name not in ("v0", "x0")}
        if set(self.bounds) != names:
            raise ConfigError(f"{self.kind} ranges need exactly {sorted(names)}")
        for name, (lo, hi) in self.bounds.items():
            if not lo <= hi:
                raise ConfigError(f"range for {name} has lower > upper")

    @classmethod
    def ou(cls) -> "ParamRanges":
        return cls("ou", dict(OU_RANGES))

    @classmethod
    def heston(cls) -> "ParamRanges":
        return cls("heston", dict(HESTON_RANGES))


_PARAM_CLASSES = {"ou": OUParams, "heston": HestonParams}


def sample_params(ranges: ParamRanges, count: int, seed: int) -> list:
    """Independent uniform draw of every parameter for each of ``count`` samples."""
    cls = _PARAM_CLASSES[ranges.kind]
    out = []
    for m in range(int(count)):
        rng = stream(seed, 11, m)
        vals = {name: float(rng.uniform(lo, hi)) if hi > lo else float(lo)
                for name, (lo, hi) in ranges.bounds.items()}
        out.append(cls(**vals))
    return out


def _per_sample(params, m_count):
    if isinstance(params, (list, tuple)):
        if len(params) != m_count:
            raise ConfigError(f"{len(params)} parameter sets for {m_count} samples")
        return list(params)
    return [params] * m_count


def ou_transition(x, theta, mu, sigma, dt):
    """Exact conditional mean and variance of X_{t+dt} given X_t = x."""
    decay = np.exp(-theta * dt)
    mean = x * decay + mu * (1.0 - decay)
    var = sigma**2 * (1.0 - np.exp(-2.0 * theta * dt)) / (2.0 * theta)
    return mean, var


def simulate_ou(params, grid: TimeGrid, M: int, seed: int, x0: float = 0.0) -> Panel:
    """Exact-transition OU sampling; ``params`` is one OUParams or a list of M."""
    dts = grid.dt
    out = np.empty((M, len(grid), 1))
    for m, p in enumerate(_per_sample(params, M)):
        z = stream(seed, 21, m).standard_normal(dts.size)
        x = float(x0)
        out[m, 0, 0] = x
        for i, dt in enumerate(dts):
            mean, var = ou_transition(x, p.theta, p.mu, p.sigma, dt)
            x = mean + math.sqrt(var) * z[i]
            out[m, i + 1, 0] = x
    return Panel(out, grid)


@dataclass(frozen=True, eq=False)
class HestonPanel:
    panel: Panel
    floor_events: int


def simulate_heston(params, grid: TimeGrid, M: int, seed: int, output: str = "returns") -> HestonPanel:
    """Log-Euler price / Euler variance scheme with full truncation.

    ``output="levels"`` gives features (X, v); ``"returns"`` gives
    (log X_t - log X_{t-1}, v_t) with a zero return at the first time.
    The un-truncated v enters the drift; max(v, 0) enters the square roots.
    """
    if output not in ("levels", "returns"):
        raise ConfigError(f"unknown Heston output {output!r}")
    dts = grid.dt
    n = len(grid)
    levels = np.empty((M, n, 2))
    floors = 0
    for m, p in enumerate(_per_sample(params, M)):
        z = stream(seed, 22, m).standard_normal((n - 1, 2))
        rho = p.rho
        z2 = rho * z[:, 0] + math.sqrt(max(0.0, 1.0 - rho * rho)) * z[:, 1]
        x, v = p.x0, p.v0
        levels[m, 0] = x, v
        for i, dt in enumerate(dts):
            vp = v if v > 0 else 0.0
            floors += v < 0
            sq = math.sqrt(vp * dt)
            x = x * math.exp((p.r - 0.5 * vp) * dt + sq * z[i, 0])
            v = v + p.kappa * (p.theta - v) * dt + p.xi * sq * z2[i]
            levels[m, i + 1] = x, v
    if floors:
        log.info("Heston variance floored %d times", floors)
    if output == "levels":
        return HestonPanel(Panel(levels, grid), floors)
    feats = levels.copy()
    feats[:, 0, 0] = 0.0
    feats[:, 1:, 0] = np.diff(np.log(levels[:, :, 0]), axis=1)
    return HestonPanel(Panel(feats, grid), floors)


def garch_stationary_variance(a0=GARCH_COEFFS[0], a1=GARCH_COEFFS[1], a2=GARCH_COEFFS[2],
                              eps_var=GARCH_EPS_VAR) -> float:
    """Stationary E[sigma^2]: the fixed point of s = a0 + (a1 + a2) eps_var s.

    The unconditional variance of X is ``eps_var`` times this.
    """
    rate = (a1 + a2) * eps_var
    if rate >= 1.0:
        raise ConfigError("GARCH coefficients give no finite stationary variance")
    return a0 / (1.0 - rate)


def simulate_garch2(grid: TimeGrid, M: int, seed: int, eps_var: float = GARCH_EPS_VAR,
                    coeffs=GARCH_COEFFS, burn_in: int = GARCH_BURN_IN) -> Panel:
    """X_t = sigma_t eps_t, sigma_t^2 = a0 + a1 X_{t-1}^2 + a2 X_{t-2}^2, eps ~ N(0, eps_var).

    Both initial variances equal the stationary value; ``burn_in`` steps are discarded.
    ``eps_var=0`` switches the noise off.
    """
    a0, a1, a2 = coeffs
    n = len(grid)
    total = n + burn_in
    out = np.empty((M, n, 1))
    sd_eps = math.sqrt(eps_var)
    s2 = garch_stationary_variance(a0, a1, a2, eps_var)
    for m in range(M):
        eps = sd_eps * stream(seed, 23, m).standard_normal(total)
        xs = np.empty(total)
        xs[0] = math.sqrt(s2) * eps[0]
        xs[1] = math.sqrt(s2) * eps[1]
        prev2, prev1 = xs[0], xs[1]
        for t in range(2, total):
            var = a0 + a1 * prev1 * prev1 + a2 * prev2 * prev2
            x = math.sqrt(var) * eps[t]
            xs[t] = x
            prev2, prev1 = prev1, x
        out[m, :, 0] = xs[burn_in:]
    return Panel(out, grid)


def simulate_sine(grid: TimeGrid, M: int, seed: int, d: int = 5) -> Panel:
    """x_f(t) = sin(2 pi eta t + phase), eta ~ U[0, 1], phase ~ U[-pi, pi] per sample and feature."""
    t = grid.times
    out = np.empty((M, len(grid), d))
    for m in range(M):
        rng = stream(seed, 24, m)
        eta = rng.uniform(0.0, 1.0, d)
        phase = rng.uniform(-np.pi, np.pi, d)
        out[m] = np.sin(2.0 * np.pi * eta[None, :] * t[:, None] + phase[None, :])
    return Panel(out, grid)


def ar_noise_cov(d: int, sigma: float) -> np.ndarray:
    return sigma * np.ones((d, d)) + (1.0 - sigma) * np.eye(d)


def simulate_ar(grid: TimeGrid, M: int, seed: int, d: int = 5, phi: float = 0.5, sigma: float = 0.8,
                include_origin: bool = False) -> Panel:
    """x_t = phi x_{t-1} + Z, Z ~ N(0, sigma 11^T + (1 - sigma) I), x_0 = 0.

    The grid holds x_1..x_N, or x_0..x_{N-1} with ``include_origin``.
    """
    if abs(phi) >= 1:
        log.warning("AR coefficient |phi| = %g >= 1 gives a non-stationary series", abs(phi))
    cov = ar_noise_cov(d, sigma)
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-12:
        raise ConfigError(f"AR noise covariance is not positive semi-definite for sigma={sigma}")
    # eigendecomposition square root tolerates the singular sigma = 1 case
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    n = len(grid)
    out = np.empty((M, n, d))
    for m in range(M):
        z = stream(seed, 25, m).standard_normal((n, d)) @ root.T
        x = np.zeros(d)
        for i in range(n):
            if include_origin:
                out[m, i] = x
                x = phi * x + z[i]
            else:
                x = phi * x + z[i]
                out[m, i] = x
    return Panel(out, grid)


def fbm_covariance(times: np.ndarray, hurst: float) -> np.ndarray:
    s = times[:, None]
    t = times[None, :]
    two_h = 2.0 * hurst
    return 0.5 * (np.abs(s) ** two_h + np.abs(t) ** two_h - np.abs(t - s) ** two_h)


def simulate_fbm(hurst: float, grid: TimeGrid, M: int, seed: int) -> Panel:
    """Exact fBM on a uniform grid via Cholesky of the covariance.

    A zero first time is kept as the deterministic origin B_0 = 0.
    """
    if not 0.0 < hurst < 1.0:
        raise ConfigError("Hurst exponent must lie in (0, 1)")
    if not grid.is_uniform():
        raise ConfigError("fBM simulation needs a uniform grid")
    times = grid.times
    zero_first = times[0] == 0.0
    pos = times[1:] if zero_first else times
    if np.any(pos <= 0):
        raise ConfigError("fBM grid times must be positive (a leading 0 is allowed)")
    chol = cholesky(fbm_covariance(pos, hurst), lower=True)
    out = np.zeros((M, len(grid), 1))
    off = 1 if zero_first else 0
    for m in range(M):
        out[m, off:, 0] = chol @ stream(seed, 26, m).standard_normal(pos.size)
    return Panel(out, grid)


def params_to_dict(p) -> dict:
    return {k: v for k, v in asdict(p).items()}
