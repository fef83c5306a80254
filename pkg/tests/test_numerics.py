import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from archforge.errors import ConfigError, ContractError, NumericalError
from archforge.numerics import (
    Rng,
    activation,
    activation_grad,
    affine_forward,
    derive_seed,
    fd_gradient,
    relative_error,
    softmax,
)
from oracles import naive_softmax

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_rng_is_reproducible():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.uniform(0, 1, 10), b.uniform(0, 1, 10))
    assert np.array_equal(a.permutation(20), b.permutation(20))


def test_derive_is_independent_of_parent_consumption():
    a = Rng(5)
    child_before = a.derive(3).random(4)
    a.random(1000)
    assert np.array_equal(child_before, a.derive(3).random(4))
    assert derive_seed(5, 3) != derive_seed(5, 4)
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)


def test_choice_returns_elements():
    rng = Rng(0)
    seq = ("x", "y", "z")
    assert {rng.choice(seq) for _ in range(200)} == set(seq)


def test_affine_forward_vector_and_batch():
    W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    b = np.array([0.5, -0.5, 1.0])
    x = np.array([1.0, -1.0])
    assert np.allclose(affine_forward(W, x, b), [-0.5, -1.5, 0.0])
    X = np.stack([x, 2 * x])
    assert affine_forward(W, X, b).shape == (2, 3)


def test_affine_forward_rejects_mismatch():
    with pytest.raises(ContractError):
        affine_forward(np.zeros((3, 2)), np.zeros(4), np.zeros(3))
    with pytest.raises(ContractError):
        affine_forward(np.zeros((3, 2)), np.zeros(2), np.zeros(2))


def test_relu_derivative_at_zero_is_zero():
    assert activation_grad("relu", np.array([0.0, -1.0, 2.0])).tolist() == [0.0, 0.0, 1.0]


def test_unknown_activation():
    with pytest.raises(ConfigError):
        activation("sigmoid", np.zeros(2))
    with pytest.raises(ConfigError):
        activation_grad("sigmoid", np.zeros(2))


@pytest.mark.parametrize("kind", ["relu", "tanh"])
def test_activation_grad_matches_finite_differences(kind):
    v = np.array([-1.3, -0.2, 0.4, 2.5])
    for i, x in enumerate(v):
        fd = fd_gradient(lambda t: float(activation(kind, t)), x)
        assert math.isclose(float(fd), float(activation_grad(kind, v)[i]), rel_tol=1e-6, abs_tol=1e-9)


@given(hnp.arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_is_a_distribution(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert math.isclose(p.sum(), 1.0, rel_tol=1e-12)
    assert np.allclose(p, naive_softmax(z.tolist()), rtol=1e-10, atol=1e-15)


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-1e3, 1e3))
def test_softmax_is_shift_invariant(z, c):
    assert np.allclose(softmax(z), softmax(z + c), atol=1e-12)


def test_softmax_large_logits_stay_finite():
    p = softmax(np.array([1000.0, 999.0, -1000.0]))
    assert np.all(np.isfinite(p))
    assert math.isclose(p.sum(), 1.0)


def test_softmax_batch_rows():
    Z = np.array([[0.0, 0.0], [1.0, 3.0]])
    P = softmax(Z)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(P[0], [0.5, 0.5])


def test_softmax_empty():
    with pytest.raises(ContractError):
        softmax(np.array([]))


def test_fd_gradient_of_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    theta = np.array([0.3, -0.7])
    g = fd_gradient(lambda t: 0.5 * t @ A @ t, theta)
    assert np.allclose(g, A @ theta, atol=1e-8)


def test_fd_gradient_raises_on_nonfinite():
    with pytest.raises(NumericalError):
        fd_gradient(lambda t: float("nan"), np.zeros(2))


def test_relative_error():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert math.isclose(relative_error(a, -a), 1.0)
