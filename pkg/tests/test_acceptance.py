"""Acceptance criteria, each at its stated tolerance and runtime limit.

Every test prints (and records for the end-of-run summary) one line of the form
``criterion N: PASS|FAIL (details; runtime)``.
"""

import json
import math
import time

import numpy as np
import pytest

import conftest
from oracles import naive_drift, ou_exact_moments
from sbts import (
    DriftConfig,
    DriftQuery,
    GenerationConfig,
    Panel,
    TimeGrid,
    anchor,
    cli,
    estimate_drift,
    generate_paths,
)
from sbts.metrics import autocorrelations, cross_correlation_score
from sbts.mle import fit_panel, heston_nll, ou_nll, run_robustness
from sbts.scaling import fit_transform, invert, rescale_returns, returns_to_path, to_log_returns
from sbts.selection import SelectionConfig, select_split
from sbts.simulators import (
    HESTON_FIXED,
    OU_FIXED,
    OUParams,
    simulate_ar,
    simulate_fbm,
    simulate_garch2,
    simulate_heston,
    simulate_ou,
)

pytestmark = pytest.mark.slow


def verdict(number, ok, detail, started, limit):
    elapsed = time.perf_counter() - started
    passed = bool(ok) and elapsed < limit
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail}; {elapsed:.1f}s of {limit}s)"
    conftest.CRITERIA.append(line)
    print(line)
    assert passed, line


def test_criterion_01_drift_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        m, d, n = (int(v) for v in (rng.integers(1, 6), rng.integers(1, 4), rng.integers(2, 7)))
        times = np.cumsum(rng.uniform(0.1, 1.0, n))
        ref = rng.normal(size=(m, n, d))
        i = int(rng.integers(0, n - 1))
        prefix = ref[int(rng.integers(0, m)), : i + 1] + rng.uniform(-0.2, 0.2, (i + 1, d))
        t = times[i] + rng.uniform(0, 0.95) * (times[i + 1] - times[i])
        x = rng.normal(size=d)
        h = rng.uniform(0.6, 2.5, d)
        k = int(rng.integers(1, n + 1))
        got = estimate_drift(DriftQuery(i, t, x, prefix), Panel(ref, TimeGrid(times)), DriftConfig(h, k))
        want = np.array(naive_drift(t, x, prefix.tolist(), ref.tolist(), times.tolist(), i, h.tolist(), k))
        rel = np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300))
        worst = max(worst, float(np.max(np.abs(got - want))) if np.all(np.abs(want) < 1e-12) else float(rel))
    verdict(1, worst <= 1e-10, f"worst relative error {worst:.2e} over 1000 instances", t0, 10)


def test_criterion_02_bridge_pinning():
    t0 = time.perf_counter()
    n_sub = 200
    vals = np.concatenate([[0.0], np.cumsum(np.random.default_rng(1).normal(size=4))])
    ref = Panel(vals[None, :, None], TimeGrid.uniform(5, 1.0, substeps=n_sub))
    gen = generate_paths(ref, DriftConfig([1.0], 1), GenerationConfig(1000, seed=11, noise_scale=1.0))
    bound = 4 * math.sqrt(1.0 / n_sub)
    share = np.mean(np.abs(gen.data[:, :, 0] - vals[None, :]) <= bound, axis=0)
    verdict(2, np.all(share >= 0.99), f"min share within 4*sqrt(delta) per grid point {share.min():.3f}", t0, 30)


def ar_acf_check(real, gen):
    lag1 = np.abs(autocorrelations(real, 1)[0] - autocorrelations(gen, 1)[0])
    return lag1


def test_criterion_03_ar_dependence():
    t0 = time.perf_counter()
    grid = TimeGrid.uniform(24, 1.0, substeps=200)
    real = simulate_ar(grid, 1000, 31, d=5, phi=0.5, sigma=0.8)
    other = simulate_ar(grid, 1000, 32, d=5, phi=0.5, sigma=0.8)
    scaled, tr = fit_transform(real, "standardize")
    model = anchor(scaled)
    cfg = SelectionConfig((0.25, 0.5, 0.75, 1.0, 1.5), (1, 2, 3), realizations_per_test=50, seed=3,
                          test_fraction=0.2)
    report = select_split(model, cfg)
    drift = report.drift_config(5)
    gen = generate_paths(model, drift, GenerationConfig(1000, seed=4))
    synth = invert(gen.data[:, 1:], tr)
    lag1 = ar_acf_check(real.data, synth)
    cross = cross_correlation_score(real, synth)
    base = cross_correlation_score(real, other)
    ok = np.all(lag1 <= 0.1) and cross <= 2 * base
    detail = (f"chosen (h, k)={report.chosen}; max lag-1 ACF gap {lag1.max():.3f} (<= 0.1); "
              f"cross-corr {cross:.4f} vs 2x real-real {2 * base:.4f}")
    verdict(3, ok, detail, t0, 15 * 60)


def test_criterion_04_bandwidth_order_monotonicity():
    t0 = time.perf_counter()
    grid = TimeGrid.uniform(252, 1 / 252, substeps=200)
    model = anchor(simulate_garch2(grid, 1000, 41))
    cfg = SelectionConfig((0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2), (2, "full"), realizations_per_test=50, seed=4,
                          max_test=100)
    report = select_split(model, cfg)
    h2, hn = report.best_for_order(2), report.best_for_order("full")
    verdict(4, h2 <= hn, f"best h with k=2: {h2}, with k=N: {hn}", t0, 20 * 60)


def test_criterion_05_scaling_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    dt = 1 / 252
    returns = Panel(rng.normal(0.001, 0.03, size=(50, 40, 3)), TimeGrid.uniform(40, dt))
    out, tr = rescale_returns(returns, dt)
    std_err = float(np.max(np.abs(out.data.reshape(-1, 3).std(axis=0, ddof=1) - math.sqrt(dt))))
    worst = 0.0
    levels = Panel(rng.normal(2.0, 1.5, size=(50, 40, 3)), TimeGrid.uniform(40, dt))
    prices = Panel(np.exp(np.cumsum(rng.normal(0, 0.02, size=(50, 40, 3)), axis=1)), TimeGrid.uniform(40, dt))
    prices = Panel(prices.data / prices.data[:, :1], prices.grid)
    for mode, panel in [("rescale", returns), ("increment_rescale", levels), ("standardize", levels),
                        ("min_max", levels), ("identity", levels), ("log_return_rescale", prices)]:
        fwd, t = fit_transform(panel, mode)
        back = invert(fwd.data, t)
        worst = max(worst, float(np.max(np.abs(back - panel.data) / np.maximum(np.abs(panel.data), 1e-300))))
    ok = std_err <= 1e-12 and worst <= 1e-10
    verdict(5, ok, f"std error {std_err:.1e} (<= 1e-12), worst round-trip relative error {worst:.1e}", t0, 1)


def test_criterion_06_scaling_necessity():
    t0 = time.perf_counter()
    dt = 1 / 252
    grid = TimeGrid.uniform(252, dt, substeps=200)
    real = simulate_ou(OUParams(1.0, 1.0, 0.001), grid, 200, 61, x0=1.0)
    returns = to_log_returns(real)
    real_sd = returns.data.std(ddof=1)
    drift = DriftConfig([0.2], 1)

    def increment_ratio(path_panel, unscale):
        gen = generate_paths(path_panel, drift, GenerationConfig(200, seed=62))
        steps = unscale(np.diff(gen.data, axis=1))
        return steps.std(ddof=1) / real_sd

    raw = increment_ratio(Panel(returns_to_path(returns.data), grid), lambda s: s)
    scaled_path, tr = fit_transform(real, "log_return_rescale")
    scaled = increment_ratio(scaled_path, tr.inverse)
    ok = 0.8 <= scaled <= 1.25 and not 0.5 <= raw <= 2.0
    verdict(6, ok, f"increment std ratio rescaled {scaled:.3f} (in [0.8, 1.25]), raw {raw:.1f} "
                   f"(outside [0.5, 2])", t0, 5 * 60)


def test_criterion_07_mle_self_consistency():
    t0 = time.perf_counter()
    dt = 1 / 252
    ou = simulate_ou(OU_FIXED, TimeGrid.uniform(252, dt), 500, 71, x0=0.0)
    fits = fit_panel("ou", ou.data, dt, restarts=3, seed=72)
    med = {n: float(np.median([getattr(f.params, n) for f in fits])) for n in ("theta", "mu", "sigma")}
    hs = simulate_heston(HESTON_FIXED, TimeGrid.uniform(100, dt), 500, 73, output="levels").panel
    hfits = fit_panel("heston", hs.data, dt, restarts=3, seed=74)
    xi = float(np.median([f.params.xi for f in hfits]))
    rho = float(np.median([f.params.rho for f in hfits]))
    checks = {
        "theta": abs(med["theta"] - 1.5) <= 0.25 * 1.5,
        "mu": abs(med["mu"] - 1.0) <= 0.10 * 1.0,
        "sigma": abs(med["sigma"] - 0.3) <= 0.05 * 0.3,
        "xi": abs(xi - 0.7) <= 0.15 * 0.7,
        "rho": abs(rho - 0.7) <= 0.1,
    }
    detail = (f"OU medians theta {med['theta']:.3f}, mu {med['mu']:.3f}, sigma {med['sigma']:.4f}; "
              f"Heston xi {xi:.3f}, rho {rho:.3f}; failing: {[k for k, v in checks.items() if not v]}")
    verdict(7, all(checks.values()), detail, t0, 10 * 60)


def test_criterion_08_fixed_parameter_robustness():
    t0 = time.perf_counter()
    grid = TimeGrid.uniform(252, 1 / 252, substeps=200)
    rep = run_robustness("ou", OU_FIXED, 1000, grid, DriftConfig([0.6], 1), seed=81)
    s = rep.summaries()
    limits = {"theta": 2 * 0.25 * 1.5, "mu": 2 * 0.10 * 1.0, "sigma": 2 * 0.05 * 0.3}
    diffs = {n: s[n]["median_diff"] for n in limits}
    ok = all(abs(diffs[n]) <= limits[n] for n in limits)
    detail = ", ".join(f"{n} {diffs[n]:+.3f} (|.| <= {limits[n]:.2f})" for n in limits)
    verdict(8, ok, "median differences " + detail, t0, 3600)


def test_criterion_09_simulator_oracles():
    t0 = time.perf_counter()
    notes = []
    ok = True
    # OU: two steps of dt against the exact law of one step of 2 dt
    theta, mu, sigma, dt, x0 = 1.5, 1.0, 0.3, 0.05, -0.4
    two = simulate_ou(OUParams(theta, mu, sigma), TimeGrid.uniform(3, dt), 40000, 91, x0=x0).data[:, 2, 0]
    mean, var = ou_exact_moments(x0, theta, mu, sigma, 2 * dt)
    z_mean = abs(two.mean() - mean) / (two.std(ddof=1) / math.sqrt(two.size))
    z_var = abs(two.var(ddof=1) - var) / (var * math.sqrt(2 / (two.size - 1)))
    ok &= z_mean < 5 and z_var < 5
    notes.append(f"OU z-scores mean {z_mean:.2f}, var {z_var:.2f}")
    # fBM variance at three times for two Hurst exponents
    grid = TimeGrid.uniform(41, 1 / 40)
    for hurst in (0.25, 0.5):
        b = simulate_fbm(hurst, grid, 5000, 92).data[..., 0]
        zs = []
        for idx in (10, 20, 40):
            want = grid.times[idx] ** (2 * hurst)
            zs.append(abs(np.mean(b[:, idx] ** 2) - want) / (want * math.sqrt(2 / (b.shape[0] - 1))))
        ok &= max(zs) < 5
        notes.append(f"fBM H={hurst} max z {max(zs):.2f}")
    # NLL gradients: central differences at two step sizes agree (Richardson check)
    x = simulate_ou(OU_FIXED, TimeGrid.uniform(80, 1 / 252), 1, 93).data[0, :, 0]
    hsd = simulate_heston(HESTON_FIXED, TimeGrid.uniform(60, 1 / 252), 1, 94, output="levels").panel.data[0]

    def grad(f, p, h):
        out = np.empty(p.size)
        for i in range(p.size):
            e = np.zeros(p.size)
            e[i] = h * max(1.0, abs(p[i]))
            out[i] = (f(p + e) - f(p - e)) / (2 * e[i])
        return out

    worst = 0.0
    for f, p in [(lambda q: ou_nll(tuple(q), x, 1 / 252), np.array([1.4, 0.9, 0.32])),
                 (lambda q: heston_nll(tuple(q), hsd, 1 / 252), np.array([2.8, 0.52, 0.68, 0.65, 0.025]))]:
        g1, g2 = grad(f, p, 1e-6), grad(f, p, 5e-7)
        ref = (4 * g2 - g1) / 3
        worst = max(worst, float(np.max(np.abs(g1 - ref) / np.maximum(np.abs(ref), 1.0))))
    ok &= worst <= 1e-5
    notes.append(f"NLL gradient relative error {worst:.1e}")
    verdict(9, ok, "; ".join(notes), t0, 120)


def test_criterion_10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    grid = {"dt": 1.0, "substeps": 30}
    configs = [
        ("simulate", {"process": "ar", "params": {"d": 3}, "M": 60, "N": 8, "dt": 1.0, "seed": 5,
                      "output": "ar.csv"}),
        ("scale", {"input": "ar.csv", "grid": grid, "mode": "standardize", "output": "s.csv",
                   "transform_output": "tr.json"}),
        ("select", {"train": "s.csv", "grid": grid, "bandwidths": [0.7, 1.4], "orders": [1, 2],
                    "realizations": 5, "max_test": 6, "anchor": True, "seed": 2,
                    "table_output": "sel.csv", "chosen_output": "chosen.json"}),
        ("generate", {"input": "s.csv", "grid": grid, "selection": "chosen.json", "anchor": True,
                      "num_paths": 150, "seed": 6, "output": "g.csv", "provenance_output": "g.ndjson",
                      "transform": "tr.json", "inverted_output": "g_orig.csv"}),
        ("evaluate", {"real": "ar.csv", "generated": "g_orig.csv", "runs": 3, "output": "m.json",
                      "per_lag_output": "lags.csv"}),
        ("robustness", {"process": "heston", "M": 20, "N": 30, "dt": 1 / 252, "substeps": 20, "bandwidth": 0.4,
                        "restarts": 1, "seed": 7, "output": "rob.json", "histogram_dir": "hist"}),
    ]
    outputs = {}
    for threads in (1, 4):
        base = tmp_path / f"t{threads}"
        base.mkdir()
        for name, cfg in configs:
            path = base / f"{name}.cfg.json"
            path.write_text(json.dumps(cfg))
            code = cli.main(["--threads", str(threads), name, str(path)])
            capsys.readouterr()
            assert code == 0, name
        outputs[threads] = {p.relative_to(base).as_posix(): p.read_bytes()
                            for p in sorted(base.rglob("*")) if p.is_file() and not p.name.endswith(".cfg.json")}
    same = outputs[1] == outputs[4]
    differing = [k for k in outputs[1] if outputs[1][k] != outputs[4].get(k)]
    verdict(10, same, f"{len(outputs[1])} output files compared across 1 and 4 threads; differing: {differing}",
            t0, 5 * 60)
