# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused elementwise kernels for the training hot loop.

Every routine mirrors a function in ``_kernels_py`` with the same
signature and the same floating-point operation order. The elementwise
updates are bit-identical across backends; ``error_correlation`` sums in a
different order and agrees to rounding.
"""

from libc.math cimport sqrt, fabs
from libc.stdint cimport uint64_t
from libc.string cimport memcpy


def rmsprop_update(double[::1] theta, const double[::1] grad, double[::1] v,
                   double lr, double gamma, double eps):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double keep = 1.0 - gamma
    cdef double g
    for i in range(n):
        g = grad[i]
        v[i] = gamma * v[i] + keep * (g * g)
        theta[i] = theta[i] - (lr * g) / (sqrt(v[i]) + eps)


def sgd_update(double[::1] theta, const double[::1] grad, double[::1] buf,
               double lr, double momentum, double decay):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double shrink = 1.0 - decay
    for i in range(n):
        buf[i] = momentum * buf[i] + grad[i]
        theta[i] = shrink * theta[i] - lr * buf[i]


cdef void _tanh_grad(const double* out, const double* dout, double* dpre, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        dpre[i] = dout[i] * (1.0 - out[i] * out[i])


cdef void _relu_grad(const double* pre, const double* dout, double* dpre, Py_ssize_t n) noexcept nogil:
    # bitwise mask instead of a branch: signs of pre are unpredictable
    cdef Py_ssize_t i
    cdef uint64_t bits
    for i in range(n):
        memcpy(&bits, &dout[i], 8)
        bits &= -(<uint64_t>(pre[i] > 0.0))
        memcpy(&dpre[i], &bits, 8)


def tanh_backward(const double[::1] out, const double[::1] dout, double[::1] dpre):
    cdef Py_ssize_t n = out.shape[0]
    if n:
        _tanh_grad(&out[0], &dout[0], &dpre[0], n)


def relu_backward(const double[::1] pre, const double[::1] dout, double[::1] dpre):
    cdef Py_ssize_t n = pre.shape[0]
    if n:
        _relu_grad(&pre[0], &dout[0], &dpre[0], n)


def error_correlation(const double[::1] v, const double[:, ::1] e):
    cdef Py_ssize_t p, o, n = e.shape[0], m = e.shape[1]
    cdef double vbar = 0.0, total = 0.0, acc, ebar
    for p in range(n):
        vbar += v[p]
    vbar /= n
    for o in range(m):
        ebar = 0.0
        for p in range(n):
            ebar += e[p, o]
        ebar /= n
        acc = 0.0
        for p in range(n):
            acc += (v[p] - vbar) * (e[p, o] - ebar)
        total += fabs(acc)
    return total
