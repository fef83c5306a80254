"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Operation order matches the compiled versions exactly.
"""

import numpy as np


def rmsprop_update(theta, grad, v, lr, gamma, eps):
    v *= gamma
    v += (1.0 - gamma) * (grad * grad)
    theta -= (lr * grad) / (np.sqrt(v) + eps)


def sgd_update(theta, grad, buf, lr, momentum, decay):
    buf *= momentum
    buf += grad
    theta *= 1.0 - decay
    theta -= lr * buf


def tanh_backward(out, dout, dpre):
    np.multiply(dout, 1.0 - out * out, out=dpre)


def relu_backward(pre, dout, dpre):
    np.multiply(dout, pre > 0.0, out=dpre)
    dpre += 0.0  # -0.0 -> +0.0, as the compiled mask produces


def error_correlation(v, e):
    vc = v - v.mean()
    ec = e - e.mean(axis=0)
    return float(np.abs(vc @ ec).sum())
