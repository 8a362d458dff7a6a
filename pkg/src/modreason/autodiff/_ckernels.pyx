# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fused kernels for the elementwise hot paths.

Semantics match ``_pykernels.py``; only the loop structure differs. Matmuls
stay in BLAS via numpy, so the win here is avoiding numpy temporaries in
softmax / layer norm / Adam, which dominate the non-BLAS time of a training
step at small d_model.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

NAME = "compiled"


def softmax_fwd(cnp.ndarray[double, ndim=2] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty_like(x)
    cdef double[:, ::1] xv = x, yv = y
    cdef Py_ssize_t i, j
    cdef double m, s
    with nogil:
        for i in range(rows):
            m = xv[i, 0]
            for j in range(1, cols):
                if xv[i, j] > m:
                    m = xv[i, j]
            s = 0.0
            for j in range(cols):
                yv[i, j] = exp(xv[i, j] - m)
                s += yv[i, j]
            for j in range(cols):
                yv[i, j] /= s
    return y


def softmax_bwd(cnp.ndarray[double, ndim=2] y, cnp.ndarray[double, ndim=2] g):
    cdef Py_ssize_t rows = y.shape[0], cols = y.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty_like(y)
    cdef double[:, ::1] yv = y, gv = g, dv = dx
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(rows):
            s = 0.0
            for j in range(cols):
                s += gv[i, j] * yv[i, j]
            for j in range(cols):
                dv[i, j] = yv[i, j] * (gv[i, j] - s)
    return dx


def layernorm_fwd(cnp.ndarray[double, ndim=2] x,
                  cnp.ndarray[double, ndim=1] gamma,
                  cnp.ndarray[double, ndim=1] beta,
                  double eps):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty_like(x)
    cdef cnp.ndarray[double, ndim=2] xhat = np.empty_like(x)
    cdef cnp.ndarray[double, ndim=2] rstd = np.empty((rows, 1), dtype=np.float64)
    cdef double[:, ::1] xv = x, yv = y, hv = xhat, rv = rstd
    cdef double[::1] gv = gamma, bv = beta
    cdef Py_ssize_t i, j
    cdef double mu, var, r, c
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += xv[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                c = xv[i, j] - mu
                var += c * c
            var /= cols
            r = 1.0 / sqrt(var + eps)
            rv[i, 0] = r
            for j in range(cols):
                hv[i, j] = (xv[i, j] - mu) * r
                yv[i, j] = hv[i, j] * gv[j] + bv[j]
    return y, xhat, rstd


def layernorm_bwd(cnp.ndarray[double, ndim=2] g,
                  cnp.ndarray[double, ndim=2] xhat,
                  cnp.ndarray[double, ndim=2] rstd,
                  cnp.ndarray[double, ndim=1] gamma):
    cdef Py_ssize_t rows = g.shape[0], cols = g.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty_like(g)
    cdef cnp.ndarray[double, ndim=1] dgamma = np.zeros(cols, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dbeta = np.zeros(cols, dtype=np.float64)
    cdef double[:, ::1] gv = g, hv = xhat, rv = rstd, dv = dx
    cdef double[::1] gammav = gamma, dgv = dgamma, dbv = dbeta
    cdef Py_ssize_t i, j
    cdef double m1, m2, dh
    with nogil:
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(cols):
                dgv[j] += gv[i, j] * hv[i, j]
                dbv[j] += gv[i, j]
                dh = gv[i, j] * gammav[j]
                m1 += dh
                m2 += dh * hv[i, j]
            m1 /= cols
            m2 /= cols
            for j in range(cols):
                dv[i, j] = (gv[i, j] * gammav[j] - m1 - hv[i, j] * m2) * rv[i, 0]
    return dx, dgamma, dbeta


def adam_step(cnp.ndarray[double, ndim=1] p,
              cnp.ndarray[double, ndim=1] g,
              cnp.ndarray[double, ndim=1] m,
              cnp.ndarray[double, ndim=1] v,
              double lr, double beta1, double beta2, double eps,
              long t, double gscale):
    cdef Py_ssize_t n = p.shape[0]
    cdef double[::1] pv = p, gv = g, mv = m, vv = v
    cdef double bc1 = 1.0 - beta1**t
    cdef double bc2 = 1.0 - beta2**t
    cdef Py_ssize_t i
    cdef double gs
    with nogil:
        for i in range(n):
            gs = gv[i] * gscale
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * gs
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * gs * gs
            pv[i] -= lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)
