"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Part one times each kernel in isolation. Part two times one training epoch
of a 2 x 512 tanh network end to end under each backend (a subprocess per
backend, since the backend is fixed at import time).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from archforge import _kernels_py
from archforge.kernels import compiled_available

EPOCH_SNIPPET = r"""
import json, time
from archforge import kernels
from archforge.data import synthetic_polygons, Dataset
from archforge.network import build_layered, init_weights
from archforge.numerics import Rng
from archforge.training import TrainConfig, fit
import numpy as np
rng = Rng(0)
X = rng.uniform(0, 1, size=(6000, 784))
y = rng.integers(0, 10, size=6000)
train = Dataset.from_arrays(X[:5000], y[:5000], 10)
val = Dataset.from_arrays(X[5000:], y[5000:], 10)
net = init_weights(build_layered(784, [(512, "tanh"), (512, "tanh")], 10), rng)
cfg = TrainConfig(max_epochs=1, patience=None)
t0 = time.perf_counter()
fit(net, train, val, cfg, Rng(1))
print(json.dumps({"backend": kernels.BACKEND, "epoch_seconds": time.perf_counter() - t0}))
"""


def _kernel_cases(n, rng):
    theta, grad, buf = rng.standard_normal(n), rng.standard_normal(n), np.abs(rng.standard_normal(n))
    out = np.tanh(rng.standard_normal(n))
    dpre = np.empty(n)
    v = rng.standard_normal(2000)
    e = rng.standard_normal((2000, 10))
    return {
        "rmsprop_update": lambda k: k.rmsprop_update(theta, grad, buf, 1e-3, 0.9, 1e-8),
        "sgd_update": lambda k: k.sgd_update(theta, grad, buf, 1e-2, 0.9, 1e-6),
        "tanh_backward": lambda k: k.tanh_backward(out, grad, dpre),
        "relu_backward": lambda k: k.relu_backward(grad, out, dpre),
        "error_correlation": lambda k: k.error_correlation(v, e),
    }


def bench_kernels(repeat, n=1_000_000):
    backends = {"python": _kernels_py}
    if compiled_available():
        from archforge import _kernels
        backends["cython"] = _kernels
    rows = []
    for name, call in _kernel_cases(n, np.random.default_rng(0)).items():
        row = {"kernel": name}
        for label, module in backends.items():
            row[label] = min(timeit.repeat(lambda: call(module), number=5, repeat=repeat)) / 5
        rows.append(row)
    return rows


def bench_epoch(backend):
    env = dict(os.environ)
    if backend == "python":
        env["ARCHFORGE_PURE_PYTHON"] = "1"
    else:
        env.pop("ARCHFORGE_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"{'kernel':<20}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for row in bench_kernels(args.repeat):
        py = row["python"] * 1e3
        cy = row.get("cython")
        if cy is None:
            print(f"{row['kernel']:<20}{py:>14.3f}{'n/a':>14}")
        else:
            print(f"{row['kernel']:<20}{py:>14.3f}{cy * 1e3:>14.3f}{py / (cy * 1e3):>9.2f}x")
    print()
    for backend in ("python", "cython") if compiled_available() else ("python",):
        r = bench_epoch(backend)
        print(f"one 2x512 tanh epoch on 5000 x 784 inputs, {r['backend']:>6} backend: {r['epoch_seconds']:.3f} s")


if __name__ == "__main__":
    main()
