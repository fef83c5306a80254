import os
import subprocess
import sys

import numpy as np
import pytest

from archforge import _kernels_py, kernels
from oracles import naive_error_correlation

compiled = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")


def _arrays(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n), rng.standard_normal(n), np.abs(rng.standard_normal(n))


def _run_both(name, args_fn):
    from archforge import _kernels

    out = []
    for module in (_kernels, _kernels_py):
        args = args_fn()
        getattr(module, name)(*args)
        out.append(args)
    return out


@compiled
@pytest.mark.parametrize("n", [1, 7, 1000])
def test_rmsprop_backends_bit_identical(n):
    theta, grad, v = _arrays(n)
    a, b = _run_both("rmsprop_update", lambda: (theta.copy(), grad.copy(), v.copy(), 1e-3, 0.9, 1e-8))
    assert a[0].tobytes() == b[0].tobytes() and a[2].tobytes() == b[2].tobytes()


@compiled
@pytest.mark.parametrize("n", [1, 7, 1000])
def test_sgd_backends_bit_identical(n):
    theta, grad, buf = _arrays(n, 1)
    a, b = _run_both("sgd_update", lambda: (theta.copy(), grad.copy(), buf.copy(), 0.01, 0.9, 1e-6))
    assert a[0].tobytes() == b[0].tobytes() and a[2].tobytes() == b[2].tobytes()


@compiled
@pytest.mark.parametrize("name", ["tanh_backward", "relu_backward"])
def test_activation_backward_bit_identical(name):
    x, d, _ = _arrays(999, 2)
    x[::5] = 0.0
    x[::7] = -0.0
    src = np.tanh(x) if name == "tanh_backward" else x
    a, b = _run_both(name, lambda: (src, d, np.empty_like(d)))
    assert a[2].tobytes() == b[2].tobytes()


def _backends():
    mods = [_kernels_py]
    if kernels.compiled_available():
        from archforge import _kernels

        mods.append(_kernels)
    return mods


def test_relu_backward_zero_at_zero():
    for module in _backends():
        out = np.empty(3)
        module.relu_backward(np.array([0.0, -1.0, 1.0]), np.array([-2.0, 3.0, 4.0]), out)
        assert out.tolist() == [0.0, 0.0, 4.0]
        assert not np.signbit(out[0])


@pytest.mark.parametrize("seed", range(5))
def test_error_correlation_backends_agree_with_oracle(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(23)
    e = rng.standard_normal((23, 4))
    want = naive_error_correlation(v.tolist(), e.tolist())
    assert abs(_kernels_py.error_correlation(v, e) - want) <= 1e-12 * max(1.0, want)
    assert abs(kernels.error_correlation(v, e) - want) <= 1e-12 * max(1.0, want)


def test_pure_python_switch():
    env = dict(os.environ, ARCHFORGE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from archforge import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@compiled
def test_training_identical_across_backends():
    """Same seed, same data: both backends give the same trained weights."""
    snippet = (
        "import numpy as np\n"
        "from archforge.data import synthetic_splits\n"
        "from archforge.network import build_layered, init_weights\n"
        "from archforge.numerics import Rng\n"
        "from archforge.training import TrainConfig, fit\n"
        "d = synthetic_splits(300, 1)\n"
        "for act, opt in (('tanh', 'rmsprop'), ('relu', 'sgd')):\n"
        "    net = init_weights(build_layered(2, [(9, act), (5, act)], 2), Rng(0))\n"
        "    fit(net, d.train, d.val, TrainConfig(optimizer=opt, max_epochs=3, patience=None), Rng(1))\n"
        "    print(net.get_flat().tobytes().hex()[:4000])\n"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, ARCHFORGE_PURE_PYTHON=flag)
        outs.append(subprocess.run([sys.executable, "-c", snippet], env=env, capture_output=True,
                                   text=True, check=True).stdout)
    assert outs[0] == outs[1]
