import math

import numpy as np
import pytest

from sbts import DriftConfig, DriftQuery, GenerationConfig, Panel, TimeGrid, estimate_drift, generate_paths
from sbts import kernels
from sbts.sampler import conditional_terminals, generate_conditional_terminals
from sbts.simulators import simulate_ar


def one_reference(n=5, sub=200, seed=0):
    rng = np.random.default_rng(seed)
    vals = np.concatenate([[0.0], np.cumsum(rng.normal(size=n - 1))])
    return Panel(vals[None, :, None], TimeGrid.uniform(n, 1.0, substeps=sub))


def test_noiseless_single_reference_is_pinned():
    ref = one_reference()
    gen = generate_paths(ref, DriftConfig([0.7], 1), GenerationConfig(3, seed=1, noise_scale=0.0))
    np.testing.assert_allclose(gen.data, np.repeat(ref.data, 3, axis=0), atol=1e-8)
    assert gen.fallback_counts.tolist() == [0, 0, 0]


def test_noisy_single_reference_stays_within_four_root_delta():
    ref = one_reference(sub=200)
    gen = generate_paths(ref, DriftConfig([50.0], 1), GenerationConfig(400, seed=2))
    dev = np.abs(gen.data - ref.data)[:, 1:, 0]
    delta = 1.0 / 200
    assert np.mean(dev <= 4 * math.sqrt(delta)) >= 0.99
    # the last Euler step leaves a single N(0, delta) residual
    assert np.std(dev.ravel() * np.sign(gen.data[:, 1:, 0] - ref.data[:, 1:, 0]).ravel()) == pytest.approx(
        math.sqrt(delta), rel=0.1)


def test_paths_start_at_configured_origin():
    ref = Panel(np.random.default_rng(0).normal(size=(20, 4, 2)), TimeGrid.uniform(4, 1.0, substeps=10))
    gen = generate_paths(ref, DriftConfig([3.0], 1), GenerationConfig(5, seed=0))
    assert np.all(gen.data[:, 0] == 0.0)


def test_output_independent_of_thread_count():
    ref = Panel(np.random.default_rng(1).normal(size=(30, 5, 2)), TimeGrid.uniform(5, 1.0, substeps=20))
    cfg, gc = DriftConfig([1.5], 2), GenerationConfig(150, seed=9)
    a = generate_paths(ref, cfg, gc, threads=1)
    b = generate_paths(ref, cfg, gc, threads=4)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.provenance_ndjson() == b.provenance_ndjson()


def test_prefix_of_paths_stable_when_count_grows():
    ref = Panel(np.random.default_rng(1).normal(size=(10, 4, 1)), TimeGrid.uniform(4, 1.0, substeps=10))
    a = generate_paths(ref, DriftConfig([2.0], 1), GenerationConfig(5, seed=3))
    b = generate_paths(ref, DriftConfig([2.0], 1), GenerationConfig(70, seed=3))
    np.testing.assert_array_equal(a.data, b.data[:5])


def test_two_targets_are_hit_in_equal_proportion():
    """With identical histories the bridge mixture reproduces the empirical next-value law."""
    data = np.array([[[0.0], [1.0]], [[0.0], [-1.0]]])
    ref = Panel(data, TimeGrid.uniform(2, 1.0, substeps=200))
    gen = generate_paths(ref, DriftConfig([1.0], 1), GenerationConfig(2000, seed=4))
    end = gen.data[:, 1, 0]
    assert np.all(np.minimum(np.abs(end - 1), np.abs(end + 1)) < 4 * math.sqrt(1 / 200) + 1e-12)
    share = np.mean(end > 0)
    assert abs(share - 0.5) < 5 * math.sqrt(0.25 / 2000)


def test_single_reference_drift_traces_brownian_bridge_variance():
    """Euler under the one-reference drift has the bridge variance s(D - s)/D at inner times."""
    grid = TimeGrid.uniform(2, 1.0)
    ref = Panel(np.zeros((1, 2, 1)), grid)
    cfg = DriftConfig([1e6], 1)
    n_sub, paths = 40, 2000
    delta = 1.0 / n_sub
    rng = np.random.default_rng(11)
    x = np.zeros(paths)
    prefix = np.zeros((1, 1))
    checkpoints = {10: None, 20: None, 30: None}
    for s in range(n_sub):
        t = s * delta
        drift = np.array([estimate_drift(DriftQuery(0, t, np.array([v]), prefix), ref, cfg)[0] for v in x])
        x = x + drift * delta + math.sqrt(delta) * rng.standard_normal(paths)
        if s + 1 in checkpoints:
            checkpoints[s + 1] = x.copy()
    for s, vals in checkpoints.items():
        t = s * delta
        want = t * (1 - t)
        se = want * math.sqrt(2 / (paths - 1))
        assert abs(vals.var(ddof=1) - want) < 5 * se


@pytest.mark.parametrize("impl", [kernels.bridge_interval_nb, kernels.bridge_interval_np])
def test_interval_kernel_equals_euler_on_estimated_drift(impl):
    rng = np.random.default_rng(2)
    m, d, n_sub = 6, 2, 25
    grid = TimeGrid([0.0, 0.7, 1.5], n_sub)
    data = rng.normal(size=(m, 3, d)) * 0.5
    ref = Panel(data, grid)
    prefix = data[0, :2] + 0.05
    cfg = DriftConfig([1.2, 0.9], 2)
    z = rng.standard_normal((1, n_sub, d))

    from sbts.sampler import _step_terms, conditioning_weights

    logk, _ = conditioning_weights(prefix, data, 0, 2, cfg.bandwidths)
    act = np.flatnonzero(np.isfinite(logk))
    base = logk[act] + _step_terms(data, grid.times)[act, 1]
    got = impl(np.ascontiguousarray(data[act, 2]), base, prefix[1], 0.7, 1.5, z, 1.0)[0]

    x = prefix[1].copy()
    step = 0.8 / n_sub
    for s in range(n_sub):
        t = 0.7 + s * step
        x = x + estimate_drift(DriftQuery(1, t, x, prefix), ref, cfg) * step + math.sqrt(step) * z[0, s]
    np.testing.assert_allclose(got, x, rtol=1e-10, atol=1e-12)


def test_window_kernel_backends_agree():
    rng = np.random.default_rng(3)
    ref = rng.normal(size=(50, 6, 3))
    prefix = ref[4] + rng.normal(scale=0.2, size=(6, 3))
    h = np.array([0.8, 1.0, 1.3])
    a = kernels.log_window_kernel_nb(prefix, ref, 2, 5, h)
    b = kernels.log_window_kernel_np(prefix, ref, 2, 5, h)
    assert np.array_equal(np.isfinite(a), np.isfinite(b))
    np.testing.assert_allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-12)


def test_conditional_terminal_noiseless_pin():
    ref = one_reference(n=4)
    out = generate_conditional_terminals(ref.data[0, :-1], ref, DriftConfig([1.0], 1), 1, seed=0, noise_scale=0.0)
    np.testing.assert_allclose(out[0], ref.data[0, -1], atol=1e-8)


def test_fallback_counts_every_realization_when_outside_support():
    ref = Panel(np.zeros((3, 3, 1)), TimeGrid.uniform(3, 1.0, substeps=10))
    prefix = np.array([[0.0], [100.0]])
    res = conditional_terminals(prefix, ref, DriftConfig([0.1], 1), 7, seed=0)
    assert res.fallback_count == 7
    assert np.all(np.isfinite(res.values))


def test_fallback_is_recorded_in_provenance():
    data = np.zeros((2, 3, 1))
    data[:, 1, 0] = [5.0, 6.0]
    ref = Panel(data, TimeGrid.uniform(3, 1.0, substeps=10))
    gen = generate_paths(ref, DriftConfig([0.01], 1), GenerationConfig(4, seed=0, noise_scale=1.0))
    assert np.all(gen.fallback_counts >= 1)
    lines = gen.provenance_ndjson().splitlines()
    assert len(lines) == 4 and '"fallback_count"' in lines[0]


@pytest.mark.slow
def test_conditional_mean_matches_ar_oracle():
    phi = 0.5
    grid = TimeGrid.uniform(4, 1.0, substeps=200)
    panel = simulate_ar(grid, 4000, 5, d=1, phi=phi, sigma=0.8, include_origin=True)
    train, held = panel.subset(np.arange(1, 4000)), panel.data[0]
    prefix = held[:-1].copy()
    prefix[-1] = 0.6
    vals = generate_conditional_terminals(prefix, train, DriftConfig([0.25], 1), 100, seed=8)
    se = vals[:, 0].std(ddof=1) / math.sqrt(100)
    assert abs(vals[:, 0].mean() - phi * 0.6) < 3 * se
