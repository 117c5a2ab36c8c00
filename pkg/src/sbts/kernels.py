"""Hot loops of the bridge sampler, in a numba flavour and a pure-numpy flavour.

``log_window_kernel`` and ``bridge_interval`` at module level are bound to the
backend chosen in :mod:`sbts._backend`; both flavours stay importable for
benchmarking and cross-checking.
"""

import math

import numpy as np

from ._backend import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# conditioning weights  log K~ = sum_{j in window} log K_h(x_j - X^m_j)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def log_window_kernel_nb(prefix, ref, j0, j1, h):
    """Log product-kernel weight of every reference over rows ``j0..j1-1``.

    ``prefix`` is (>= j1, d), ``ref`` is (M, N, d). Returns (M,), ``-inf`` outside support.
    """
    m_count = ref.shape[0]
    d = ref.shape[2]
    log_norm = 0.0
    for f in range(d):
        log_norm -= math.log(h[f])
    out = np.empty(m_count)
    for m in range(m_count):
        acc = 0.0
        for j in range(j0, j1):
            for f in range(d):
                u = (prefix[j, f] - ref[m, j, f]) / h[f]
                if u >= 1.0 or u <= -1.0:
                    acc = -np.inf
                    break
                acc += 2.0 * math.log1p(-u * u)
            if acc == -np.inf:
                break
            acc += log_norm
        out[m] = acc
    return out


def log_window_kernel_np(prefix, ref, j0, j1, h):
    u = (prefix[None, j0:j1, :] - ref[:, j0:j1, :]) / h
    inside = np.all(np.abs(u) < 1.0, axis=(1, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = 2.0 * np.log1p(-np.minimum(u * u, 1.0)) - np.log(h)
    out = np.full(ref.shape[0], -np.inf)
    out[inside] = terms[inside].sum(axis=(1, 2))
    return out


# ---------------------------------------------------------------------------
# Euler integration of one grid interval under the kernel drift
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def bridge_interval_nb(ref_next, base, x0, t0, t1, z, noise_scale):
    """Integrate P realizations from ``x0`` at ``t0`` to ``t1``.

    ``ref_next`` (Ma, d): active references' values at ``t1``.
    ``base`` (Ma,): log K~ plus the time-independent part of log F.
    ``z`` (P, n_sub, d): standard normals, one row of sub-steps per realization.
    """
    p_count, n_sub, d = z.shape
    ma = ref_next.shape[0]
    delta = (t1 - t0) / n_sub
    amp = noise_scale * math.sqrt(delta)
    out = np.empty((p_count, d))
    logw = np.empty(ma)
    num = np.empty(d)
    x = np.empty(d)
    for p in range(p_count):
        for f in range(d):
            x[f] = x0[f]
        for s in range(n_sub):
            tau = t1 - (t0 + s * delta)
            inv = 0.5 / tau
            top = -np.inf
            for m in range(ma):
                acc = 0.0
                for f in range(d):
                    diff = ref_next[m, f] - x[f]
                    acc += diff * diff
                lw = base[m] - acc * inv
                logw[m] = lw
                if lw > top:
                    top = lw
            den = 0.0
            for f in range(d):
                num[f] = 0.0
            for m in range(ma):
                w = math.exp(logw[m] - top)
                den += w
                for f in range(d):
                    num[f] += w * (ref_next[m, f] - x[f])
            scale = delta / (tau * den)
            for f in range(d):
                x[f] += num[f] * scale + amp * z[p, s, f]
        for f in range(d):
            out[p, f] = x[f]
    return out


def bridge_interval_np(ref_next, base, x0, t0, t1, z, noise_scale):
    p_count, n_sub, d = z.shape
    delta = (t1 - t0) / n_sub
    amp = noise_scale * math.sqrt(delta)
    x = np.repeat(np.asarray(x0, dtype=np.float64)[None, :], p_count, axis=0)
    for s in range(n_sub):
        tau = t1 - (t0 + s * delta)
        diff = ref_next[None, :, :] - x[:, None, :]
        logw = base[None, :] - np.einsum("pmf,pmf->pm", diff, diff) * (0.5 / tau)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        num = np.einsum("pm,pmf->pf", w, diff)
        x = x + num * (delta / (tau * w.sum(axis=1)))[:, None] + amp * z[:, s, :]
    return x


if USE_NUMBA:
    log_window_kernel = log_window_kernel_nb
    bridge_interval = bridge_interval_nb
else:
    log_window_kernel = log_window_kernel_np
    bridge_interval = bridge_interval_np
