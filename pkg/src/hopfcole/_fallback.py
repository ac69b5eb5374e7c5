"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

# rows per chunk; keeps the (rows, N) temporaries around 8 MB
_CHUNK_ELEMS = 1 << 20


def _chunks(m, n):
    step = max(1, _CHUNK_ELEMS // max(n, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def _costs(X, Y, Ainv):
    diff = X[:, None, :] - Y[None, :, :]
    if Ainv is None:
        return np.einsum("mnk,mnk->mn", diff, diff)
    return np.einsum("mnk,kl,mnl->mn", diff, Ainv, diff)


def hc_batch(X, Y, g, t, eps, Ainv=None):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    m = X.shape[0]
    u = np.empty(m)
    idx = np.empty(m, dtype=np.intp)
    for sl in _chunks(m, Y.shape[0]):
        F = g[None, :] + _costs(X[sl], Y, Ainv) / (4.0 * t)
        j = np.argmin(F, axis=1)
        fmin = F[np.arange(F.shape[0]), j]
        s = np.exp(-(F - fmin[:, None]) / eps).sum(axis=1)
        u[sl] = fmin - eps * np.log(s)
        idx[sl] = j
    return u, idx


def lse_affine_batch(X, W, b, eps):
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = X.shape[0]
    f = np.empty(m)
    idx = np.empty(m, dtype=np.intp)
    for sl in _chunks(m, W.shape[0]):
        Z = X[sl] @ W.T + b[None, :]
        j = np.argmax(Z, axis=1)
        zmax = Z[np.arange(Z.shape[0]), j]
        s = np.exp((Z - zmax[:, None]) / eps).sum(axis=1)
        f[sl] = zmax + eps * np.log(s)
        idx[sl] = j
    return f, idx


def entropy_batch(X, Y, g, t, eps):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    m = X.shape[0]
    H = np.empty(m)
    G = np.empty((m, X.shape[1]))
    for sl in _chunks(m, Y.shape[0]):
        F = g[None, :] + _costs(X[sl], Y, None) / (4.0 * t)
        a = -(F - F.min(axis=1, keepdims=True)) / eps
        logp = a - np.log(np.exp(a).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        h = -(p * logp).sum(axis=1)
        ybar = p @ Y
        cross = (p * -logp) @ Y
        H[sl] = h
        G[sl] = (cross - ybar * h[:, None]) / (2.0 * t * eps)
    return H, G
