"""Dense linear algebra helpers, activations and a finite-difference oracle.

All arithmetic is float64. Randomness flows through :class:`Rng`, a thin
wrapper over numpy's PCG64 generator so that a seed fully determines a run
on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, NumericalError

ACTIVATIONS = ("relu", "tanh")

_MASK64 = (1 << 64) - 1


class Rng:
    """Seeded PCG64 stream.

    Child streams come from :meth:`derive`, which mixes the parent seed with
    a task index through numpy's ``SeedSequence`` hash (seed as entropy,
    index as spawn key). Children therefore never depend on how much of the
    parent stream was consumed, which keeps parallel work reproducible.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, *index: int) -> "Rng":
        return Rng(derive_seed(self.seed, *index))

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, seq):
        """Uniform pick from a sequence (returns the element, not an index)."""
        return seq[int(self.generator.integers(len(seq)))]

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def derive_seed(seed: int, *index: int) -> int:
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(i) for i in index))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def affine_forward(W, x, b):
    """Return ``W @ x + b``. ``x`` may be a vector or a batch of row vectors."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ContractError(
            f"affine_forward: W{W.shape}, x{x.shape}, b{b.shape} do not chain"
        )
    if x.ndim == 1:
        return W @ x + b
    return x @ W.T + b


def activation(kind: str, v):
    v = np.asarray(v, dtype=np.float64)
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "tanh":
        return np.tanh(v)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_grad(kind: str, v):
    """Elementwise derivative at the pre-activation ``v``.

    The relu derivative at exactly zero is taken to be 0.
    """
    v = np.asarray(v, dtype=np.float64)
    if kind == "relu":
        return (v > 0.0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(v)
        return 1.0 - t * t
    raise ConfigError(f"unknown activation {kind!r}")


def softmax(z):
    """Softmax over the last axis, computed after subtracting the row max."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ContractError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def fd_gradient(f, theta, eps: float = 1e-6):
    """Central-difference gradient of the scalar function ``f`` at ``theta``."""
    if not eps > 0:
        raise ContractError("fd_gradient needs eps > 0")
    theta = np.array(theta, dtype=np.float64)
    scalar = theta.ndim == 0
    flat = theta.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f(theta.item() if scalar else theta)
        flat[i] = old - eps
        down = f(theta.item() if scalar else theta)
        flat[i] = old
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (up - down) / (2.0 * eps)
    return grad.reshape(theta.shape)


def relative_error(a, b) -> float:
    """Norm-wise relative error, safe when both sides vanish."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)
