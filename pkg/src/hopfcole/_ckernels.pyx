# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for batched log-sum-exp evaluation.

Every routine here has a numpy twin in ``hopfcole._fallback`` with the same
signature; ``hopfcole.kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


cdef inline double _cost(const double[:, ::1] X, Py_ssize_t i,
                         const double[:, ::1] Y, Py_ssize_t j,
                         const double[:, ::1] Ainv, bint aniso,
                         double[::1] diff, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t k, l
    cdef double s = 0.0, r
    if not aniso:
        for k in range(d):
            r = X[i, k] - Y[j, k]
            s += r * r
        return s
    for k in range(d):
        diff[k] = X[i, k] - Y[j, k]
    for k in range(d):
        r = 0.0
        for l in range(d):
            r += Ainv[k, l] * diff[l]
        s += diff[k] * r
    return s


def hc_batch(const double[:, ::1] X, const double[:, ::1] Y,
             const double[::1] g, double t, double eps, Ainv=None):
    """Return (u, argmin) with u_i = -eps*log sum_j exp(-(g_j + c(x_i, y_j))/eps)."""
    cdef Py_ssize_t m = X.shape[0], n = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, jbest
    cdef double fmin, s, f, inv4t = 1.0 / (4.0 * t)
    cdef bint aniso = Ainv is not None
    cdef const double[:, ::1] A
    if aniso:
        A = np.ascontiguousarray(Ainv, dtype=np.float64)
    else:
        A = np.zeros((1, 1))
    cdef double[::1] F = np.empty(n)
    cdef double[::1] diff = np.empty(d)
    out = np.empty(m)
    idx = np.empty(m, dtype=np.intp)
    cdef double[::1] u = out
    cdef Py_ssize_t[::1] am = idx
    with nogil:
        for i in range(m):
            fmin = INFINITY
            jbest = 0
            for j in range(n):
                f = g[j] + _cost(X, i, Y, j, A, aniso, diff, d) * inv4t
                F[j] = f
                if f < fmin:
                    fmin = f
                    jbest = j
            s = 0.0
            for j in range(n):
                s += exp(-(F[j] - fmin) / eps)
            u[i] = fmin - eps * log(s)
            am[i] = jbest
    return out, idx


def lse_affine_batch(const double[:, ::1] X, const double[:, ::1] W,
                     const double[::1] b, double eps):
    """Return (f, argmax) with f_i = eps*log sum_j exp((W_j.x_i + b_j)/eps)."""
    cdef Py_ssize_t m = X.shape[0], n = W.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k, jbest
    cdef double zmax, s, z
    cdef double[::1] Z = np.empty(n)
    out = np.empty(m)
    idx = np.empty(m, dtype=np.intp)
    cdef double[::1] f = out
    cdef Py_ssize_t[::1] am = idx
    with nogil:
        for i in range(m):
            zmax = -INFINITY
            jbest = 0
            for j in range(n):
                z = b[j]
                for k in range(d):
                    z += W[j, k] * X[i, k]
                Z[j] = z
                if z > zmax:
                    zmax = z
                    jbest = j
            s = 0.0
            for j in range(n):
                s += exp((Z[j] - zmax) / eps)
            f[i] = zmax + eps * log(s)
            am[i] = jbest
    return out, idx


def entropy_batch(const double[:, ::1] X, const double[:, ::1] Y,
                  const double[::1] g, double t, double eps):
    """Attribution entropy and its closed-form gradient at each row of X.

    The gradient is Cov_pi(y, -log pi) / (2 t eps).
    """
    cdef Py_ssize_t m = X.shape[0], n = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double fmin, s, logs, f, r, lp, h, inv4t = 1.0 / (4.0 * t)
    cdef double scale = 1.0 / (2.0 * t * eps)
    cdef double[::1] F = np.empty(n)
    cdef double[::1] P = np.empty(n)
    cdef double[::1] NL = np.empty(n)
    cdef double[::1] ybar = np.empty(d)
    cdef double[::1] cross = np.empty(d)
    Hout = np.empty(m)
    Gout = np.empty((m, d))
    cdef double[::1] H = Hout
    cdef double[:, ::1] G = Gout
    with nogil:
        for i in range(m):
            fmin = INFINITY
            for j in range(n):
                f = g[j]
                for k in range(d):
                    r = X[i, k] - Y[j, k]
                    f += r * r * inv4t
                F[j] = f
                if f < fmin:
                    fmin = f
            s = 0.0
            for j in range(n):
                P[j] = exp(-(F[j] - fmin) / eps)
                s += P[j]
            logs = log(s)
            h = 0.0
            for k in range(d):
                ybar[k] = 0.0
                cross[k] = 0.0
            for j in range(n):
                lp = -(F[j] - fmin) / eps - logs
                P[j] = P[j] / s
                NL[j] = -lp
                h += P[j] * NL[j]
            for j in range(n):
                for k in range(d):
                    ybar[k] += P[j] * Y[j, k]
                    cross[k] += P[j] * Y[j, k] * NL[j]
            H[i] = h
            for k in range(d):
                G[i, k] = (cross[k] - ybar[k] * h) * scale
    return Hout, Gout
