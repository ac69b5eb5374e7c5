"""Kernel networks for general convex Hamiltonians in one dimension.

The Lagrangian is tabulated by a discrete Legendre transform of sampled
``H(p)``, then ``K(x) = -eps log sum_j exp(-(t L((x - y_j)/t) + g_j)/eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SupportSet

# stands in for +inf outside the effective domain; t*L stays finite so the
# max-shift in the kernel sum never sees inf - inf
SENTINEL = 1e100


@dataclass(frozen=True, eq=False)
class LegendreTable:
    v: np.ndarray
    L: np.ndarray

    @property
    def finite(self) -> np.ndarray:
        return self.L < SENTINEL

    @property
    def domain(self) -> tuple[float, float]:
        """Interval of v where L is finite (the effective domain)."""
        vf = self.v[self.finite]
        if vf.size == 0:
            return (np.nan, np.nan)
        return float(vf[0]), float(vf[-1])

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if np.any(v < self.v[0]) or np.any(v > self.v[-1]):
            raise ValueError(f"velocity outside table range [{self.v[0]}, {self.v[-1]}]")
        return np.interp(v, self.v, self.L)

    def convexity_violation(self) -> float:
        """Most negative discrete second difference over the finite part (0 if none)."""
        fin = self.finite
        v, L = self.v[fin], self.L[fin]
        if v.size < 3:
            return 0.0
        s = np.diff(L) / np.diff(v)
        d2 = np.diff(s)
        return float(max(0.0, -d2.min()))


def legendre_transform_1d(p_grid, H_samples, v_grid, rtol: float = 1e-12) -> LegendreTable:
    """``L(v) = max_i (p_i v - H(p_i))`` with +inf where the sup escapes the p grid.

    The sup is unbounded when it is attained at an end of the p grid and ``v``
    lies beyond that end's secant slope of H.
    """
    p = np.asarray(p_grid, dtype=np.float64)
    H = np.asarray(H_samples, dtype=np.float64)
    v = np.asarray(v_grid, dtype=np.float64)
    if p.ndim != 1 or p.shape != H.shape or p.size < 2:
        raise ValueError("p grid and H samples must be 1-D of equal length >= 2")
    if np.any(np.diff(p) <= 0) or np.any(np.diff(v) <= 0):
        raise ValueError("p and v grids must be strictly increasing")
    if not np.all(np.isfinite(H)):
        raise ValueError("H samples must be finite")
    slopes = np.diff(H) / np.diff(p)
    if np.any(np.diff(slopes) < -rtol * max(1.0, np.abs(slopes).max())):
        k = int(np.argmin(np.diff(slopes))) + 1
        raise ValueError(f"H samples are not convex near p = {p[k]}")
    L = (v[:, None] * p[None, :] - H[None, :]).max(axis=1)
    tol = rtol * max(1.0, np.abs(slopes).max())
    escape = (v > slopes[-1] + tol) | (v < slopes[0] - tol)
    L = np.where(escape, SENTINEL, L)
    return LegendreTable(v, L)


def kernel_network_eval(support: SupportSet, table: LegendreTable, x, t: float, eps: float):
    """Kernel-network output at a point or a 1-D array of points."""
    if support.dim != 1:
        raise ValueError("kernel networks are implemented for d = 1")
    if t <= 0 or eps <= 0:
        raise ValueError("t and eps must be positive")
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(-1)
    y = support.atoms[:, 0]
    V = (xs[:, None] - y[None, :]) / t
    lo, hi = table.v[0], table.v[-1]
    bad = (V < lo) | (V > hi)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ValueError(
            f"atom {j} (y = {y[j]}) gives velocity {V[i, j]:.6g} at x = {xs[i]:.6g}, "
            f"outside the Legendre table [{lo}, {hi}]")
    F = t * np.interp(V, table.v, table.L) + support.values[None, :]
    fmin = F.min(axis=1)
    if np.any(fmin >= SENTINEL * t * 0.5):
        raise ValueError("no atom reaches x inside the effective domain of L")
    K = fmin - eps * np.log(np.exp(-(F - fmin[:, None]) / eps).sum(axis=1))
    return float(K[0]) if np.ndim(x) == 0 else K
