"""Curvature bounds and certified radii for single LSE layers.

The input Hessian of an LSE layer is a Gibbs covariance of its weight rows,
so its spectral norm never exceeds ``max_j ||W_j||^2 / eps``. That bound gives
a quadratic perturbation bound and a closed-form certified radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import HJNetwork, SupportSet, _check_te, build_network, lse_forward

POWER_ITERS = 100
POWER_RTOL = 1e-10
POWER_SEED = 0x5EED


def _pi(net: HJNetwork, x):
    z = net.W @ np.asarray(x, dtype=np.float64).reshape(-1) + net.b
    e = np.exp((z - z.max()) / net.eps)
    return e / e.sum()


def input_gradient(net: HJNetwork, x) -> np.ndarray:
    """sum_j pi_j W_j."""
    return _pi(net, x) @ net.W


def input_hessian(net: HJNetwork, x) -> np.ndarray:
    """eps^-1 W^T (diag pi - pi pi^T) W, formed from pi-centered rows so it is PSD by construction."""
    pi = _pi(net, x)
    Wc = net.W - pi @ net.W
    Hm = (Wc * pi[:, None]).T @ Wc / net.eps
    return 0.5 * (Hm + Hm.T)


def _power_norm(M, seed=POWER_SEED):
    d = M.shape[0]
    v = np.random.default_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(POWER_ITERS):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= POWER_RTOL * nw:
            lam = nw
            break
        lam = nw
    return float(lam)


def hessian_spectral_norm(net: HJNetwork, x):
    """(power-iteration ||Hessian||_2, bound max_j ||W_j||^2/eps)."""
    return _power_norm(input_hessian(net, x)), net.row_norm_max() ** 2 / net.eps


def radius_formula(tau: float, eps: float, wnorm: float) -> float:
    """r* = 2 tau / (||W|| (sqrt(1 + 2 tau/eps) + 1)); inf for zero weights."""
    if tau < 0 or eps <= 0 or wnorm < 0:
        raise ValueError("need tau >= 0, eps > 0, ||W|| >= 0")
    if wnorm == 0.0:
        return math.inf
    return 2.0 * tau / (wnorm * (math.sqrt(1.0 + 2.0 * tau / eps) + 1.0))


@dataclass(frozen=True)
class RobustnessCertificate:
    eps: float
    tau: float
    w_row_norm_max: float
    hessian_bound: float
    certified_radius: float

    def to_json(self) -> str:
        doc = asdict(self)
        if math.isinf(self.certified_radius):
            doc["certified_radius"] = "inf"
        return json.dumps(doc, indent=2)


def certified_radius(net: HJNetwork, tau: float) -> RobustnessCertificate:
    if not tau > 0:
        raise ValueError(f"tolerance tau must be positive, got {tau}")
    wn = net.row_norm_max()
    return RobustnessCertificate(net.eps, float(tau), wn, wn ** 2 / net.eps,
                                 radius_formula(tau, net.eps, wn))


def perturbation_bound(net: HJNetwork, r: float) -> float:
    wn = net.row_norm_max()
    return wn * r + wn ** 2 * r ** 2 / (2.0 * net.eps)


def perturbation_check(net: HJNetwork, x, r: float, n_samples: int, seed: int = 0):
    """(max |f(x+delta) - f(x)| over sampled ||delta|| = r, bound ||W||r + ||W||^2 r^2/(2 eps))."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    bound = perturbation_bound(net, r)
    if r == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n_samples, net.dim))
    gr = input_gradient(net, x)
    if np.linalg.norm(gr) > 0:
        D = np.vstack([D, gr, -gr])
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    f0 = lse_forward(net, x)
    fs = lse_forward(net, x[None, :] + r * D)
    return float(np.max(np.abs(fs - f0))), bound


@dataclass(frozen=True, eq=False)
class ShockPath:
    positions: np.ndarray  # (n, d)
    s: np.ndarray  # signed offset from the crossing along the path
    pi_i: np.ndarray
    pi_j: np.ndarray
    hess_norm: np.ndarray
    crossing: np.ndarray
    crossing_index: int

    @property
    def leakage(self) -> float:
        """Gibbs mass on atoms other than i, j at the crossing."""
        k = self.crossing_index
        return float(max(0.0, 1.0 - self.pi_i[k] - self.pi_j[k]))

    def crossing_balanced(self) -> bool:
        k = self.crossing_index
        return abs(self.pi_i[k] - self.pi_j[k]) <= 1e-6 + self.leakage


def shock_crossing(support: SupportSet, i: int, j: int, t: float) -> np.ndarray:
    """Point where the segment through y_i, y_j meets their tie hyperplane."""
    yi, yj = support.atoms[i], support.atoms[j]
    gi, gj = support.values[i], support.values[j]
    n = (yi - yj) / (2.0 * t)
    c = gi - gj + (yi @ yi - yj @ yj) / (4.0 * t)
    # x(s) = y_j + s (y_i - y_j); n.x(s) = c
    s = (c - n @ yj) / (n @ (yi - yj))
    return yj + s * (yi - yj)


def shock_probe(support: SupportSet, i: int, j: int, t: float, eps: float,
                n_path_points: int = 201) -> ShockPath:
    _check_te(t, eps)
    if i == j:
        raise ValueError("shock probe needs two different atoms")
    if support.dim > 3:
        raise ValueError("shock probe is limited to d <= 3")
    for k in (i, j):
        if not 0 <= k < support.size:
            raise IndexError(f"atom index {k} out of range")
    sep = float(np.linalg.norm(support.atoms[i] - support.atoms[j]))
    if sep == 0.0:
        raise ValueError("coincident atoms")
    n_path_points = max(3, n_path_points | 1)  # odd, so the crossing is a sample
    xc = shock_crossing(support, i, j, t)
    u = (support.atoms[i] - support.atoms[j]) / sep
    s = np.linspace(-3.0 * sep, 3.0 * sep, n_path_points)
    mid = n_path_points // 2
    s[mid] = 0.0
    P = xc[None, :] + s[:, None] * u[None, :]
    net = build_network(support, t, eps)
    pis = np.empty((n_path_points, 2))
    hn = np.empty(n_path_points)
    for k, x in enumerate(P):
        pi = _pi(net, x)
        pis[k] = pi[i], pi[j]
        hn[k] = np.linalg.norm(input_hessian(net, x), 2)
    return ShockPath(P, s, pis[:, 0], pis[:, 1], hn, xc, mid)


def refined_pair(k: int, delta: float = 1.0) -> SupportSet:
    """k + 1 equally spaced equal-g atoms on [0, delta] (k = 1 is the plain pair)."""
    if k < 1:
        raise ValueError("refinement level k must be >= 1")
    y = np.linspace(0.0, delta, k + 1)
    return SupportSet(y[:, None], np.zeros(k + 1))


def refined_peak_hessian(k: int, t: float, eps: float, delta: float = 1.0,
                         n_path_points: int = 201) -> float:
    """Largest Hessian norm along shock probes of every adjacent pair of the k-refined family."""
    sup = refined_pair(k, delta)
    return max(float(shock_probe(sup, a + 1, a, t, eps, n_path_points).hess_norm.max())
               for a in range(k))
