import json
import os
import subprocess
import sys

import numpy as np

from sbts import backend_name

SCRIPT = """
import json, sys
import numpy as np
from sbts import DriftConfig, GenerationConfig, Panel, TimeGrid, backend_name, generate_paths
ref = Panel(np.random.default_rng(4).normal(size=(25, 5, 2)), TimeGrid.uniform(5, 1.0, substeps=30))
ref = Panel(np.concatenate([np.zeros((25, 1, 2)), ref.data[:, 1:]], axis=1), ref.grid)
gen = generate_paths(ref, DriftConfig([0.9, 1.4], 2), GenerationConfig(12, seed=2))
print(json.dumps({"backend": backend_name(), "data": gen.data.tolist(),
                  "fallbacks": gen.fallback_counts.tolist()}))
"""


def run_with(flag):
    env = dict(os.environ, SBTS_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_numpy_and_numba_backends_agree():
    fast, slow = run_with("1"), run_with("0")
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    np.testing.assert_allclose(fast["data"], slow["data"], rtol=1e-9, atol=1e-11)
    assert fast["fallbacks"] == slow["fallbacks"]


def test_in_process_backend_is_reported():
    assert backend_name() in ("numba", "numpy")
