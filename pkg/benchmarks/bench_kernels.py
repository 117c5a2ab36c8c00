"""Compare the numba and pure-numpy sampler kernels.

    python3 benchmarks/bench_kernels.py [--refs 500] [--dim 5] [--substeps 200] [--repeat 5]

Times one grid interval of the Euler bridge loop and one conditioning-weight
evaluation per backend, checks the two agree, and prints a JSON line per case.
A full ``generate_paths`` run is timed per backend in a subprocess, because the
backend is fixed at import time by the ``SBTS_NUMBA`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from sbts import kernels

_END_TO_END = """
import time
from sbts import DriftConfig, GenerationConfig, TimeGrid, anchor, backend_name, generate_paths
from sbts.simulators import simulate_ar
ref = anchor(simulate_ar(TimeGrid.uniform({n}, 1.0, substeps={sub}), {m}, 0, d={d}))
cfg = DriftConfig.uniform(0.75, {d}, 2)
generate_paths(ref, cfg, GenerationConfig(2, 0))  # compile / warm up
t = time.perf_counter()
generate_paths(ref, cfg, GenerationConfig({paths}, 1))
print(backend_name(), time.perf_counter() - t)
"""


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--refs", type=int, default=500)
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--times", type=int, default=24)
    ap.add_argument("--substeps", type=int, default=200)
    ap.add_argument("--realizations", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--paths", type=int, default=50)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    m, d, n = args.refs, args.dim, args.times
    ref = rng.standard_normal((m, n, d))
    prefix = ref[0] + 0.1 * rng.standard_normal((n, d))
    h = np.full(d, 1.5)
    base = rng.standard_normal(m)
    z = rng.standard_normal((args.realizations, args.substeps, d))
    x0 = np.zeros(d)

    cases = {
        "bridge_interval": (
            lambda: kernels.bridge_interval_nb(ref[:, 1], base, x0, 0.0, 1.0, z, 1.0),
            lambda: kernels.bridge_interval_np(ref[:, 1], base, x0, 0.0, 1.0, z, 1.0),
        ),
        "log_window_kernel": (
            lambda: kernels.log_window_kernel_nb(prefix, ref, 0, n - 1, h),
            lambda: kernels.log_window_kernel_np(prefix, ref, 0, n - 1, h),
        ),
    }
    for name, (fast, slow) in cases.items():
        a, b = fast(), slow()  # first call compiles the numba flavour
        finite = np.isfinite(a)
        if not np.array_equal(finite, np.isfinite(b)):
            raise SystemExit(f"{name}: backends disagree on kernel support")
        err = float(np.max(np.abs(a[finite] - b[finite]), initial=0.0))
        t_nb, t_np = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(json.dumps({"case": name, "numba_s": t_nb, "numpy_s": t_np,
                          "speedup": t_np / t_nb, "max_abs_diff": err}))

    if args.skip_end_to_end:
        return
    code = _END_TO_END.format(n=n, sub=args.substeps, m=m, d=d, paths=args.paths)
    for flag in ("1", "0"):
        env = dict(os.environ, SBTS_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(json.dumps({"case": "generate_paths", "backend": backend, "paths": args.paths,
                          "seconds": float(secs)}))


if __name__ == "__main__":
    main()
