"""Gibbs attribution, influence formulas and the entropy landscape.

The Gibbs weights of the Hopf-Cole sum are the layer's attribution
distribution over training atoms. Their entropy ``H(x; eps)`` is a smooth
landscape whose critical points merge in fold bifurcations as ``eps`` grows.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import SupportSet, _check_te, _points

log = logging.getLogger(__name__)

GRAD_TOL = 1e-9
MAX_NEWTON = 200
MAX_HALVINGS = 30
CLASSIFY_TOL = 1e-8
FD_REL_STEP = 1e-4
DEDUP_REL = 1e-4
# converged points further than this fraction of the diameter outside the
# atoms' bounding box are flat-tail artifacts, not landscape features
HULL_PAD = 0.5
SEED_PAD = 0.1
MAX_STEP_REL = 0.25
ESCAPE_REL = 0.25  # seeds leaving the filter box by this much are dropped
FLAT_H = 1e-12  # entropy at rounding level: Hessian is degenerate there too
STEP_TOL = 1e-6  # converged also needs the Newton step below this fraction of the diameter


@dataclass(frozen=True, eq=False)
class GibbsWeights:
    pi: np.ndarray
    x: np.ndarray
    eps: float

    def __len__(self):
        return self.pi.shape[0]


def _costs(support, X, t):
    diff = X[:, None, :] - support.atoms[None, :, :]
    return support.values[None, :] + np.einsum("mnk,mnk->mn", diff, diff) / (4.0 * t)


def _gibbs(support, X, t, eps):
    F = _costs(support, X, t)
    a = -(F - F.min(axis=1, keepdims=True)) / eps
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def gibbs_weights(support: SupportSet, x, t: float, eps: float) -> GibbsWeights:
    """pi_j proportional to exp(-(|x - y_j|^2/(4t) + g_j)/eps)."""
    _check_te(t, eps)
    X, _ = _points(x, support.dim)
    if X.shape[0] != 1:
        raise ValueError("gibbs_weights takes a single point; use gibbs_matrix for batches")
    return GibbsWeights(_gibbs(support, X, t, eps)[0], X[0].copy(), float(eps))


def gibbs_matrix(support: SupportSet, X, t: float, eps: float) -> np.ndarray:
    """Rows of Gibbs weights for a batch of points, shape (m, N)."""
    _check_te(t, eps)
    X, _ = _points(X, support.dim)
    return _gibbs(support, X, t, eps)


def soft_prediction(weights: GibbsWeights, support: SupportSet) -> float:
    """f_hat = sum_j pi_j g_j, clipped into [min g, max g] against rounding."""
    if len(weights) != support.size:
        raise ValueError("weights and support have different sizes")
    f = float(weights.pi @ support.values)
    return min(max(f, float(support.values.min())), float(support.values.max()))


def label_sensitivity(support: SupportSet, x, t: float, eps: float, j: int) -> float:
    """d f_hat / d g_j = pi_j (1 + (f_hat - g_j)/eps)."""
    if not 0 <= j < support.size:
        raise IndexError(f"atom index {j} out of range for N = {support.size}")
    w = gibbs_weights(support, x, t, eps)
    f = float(w.pi @ support.values)
    return float(w.pi[j] * (1.0 + (f - support.values[j]) / eps))


def prediction_gradient(support: SupportSet, x, t: float, eps: float) -> np.ndarray:
    """grad_x f_hat = Cov_pi(g, y)/(2 t eps)."""
    w = gibbs_weights(support, x, t, eps)
    pi, g, Y = w.pi, support.values, support.atoms
    gc = g - pi @ g
    yc = Y - pi @ Y
    return (pi * gc) @ yc / (2.0 * t * eps)


def attribution_entropy(support: SupportSet, x, t: float, eps: float):
    """(H, grad H) with grad H = Cov_pi(y, -log pi)/(2 t eps)."""
    _check_te(t, eps)
    X, single = _points(x, support.dim)
    H, G = kernels.entropy_batch(X, support.atoms, support.values, t, eps)
    H = np.clip(H, 0.0, math.log(support.size))
    if single:
        return float(H[0]), G[0]
    return H, G


def ntk_gram(support: SupportSet, xs, t: float, eps: float):
    """(K, min eigenvalue) with K_ab = eps^2 <pi(x_a), pi(x_b)>.

    The eigenvalue is eps^2 sigma_min(P)^2 from the SVD of the Gibbs matrix
    P: forming K first squares the conditioning and loses it to rounding.
    """
    P = gibbs_matrix(support, xs, t, eps)
    K = eps ** 2 * (P @ P.T)
    K = 0.5 * (K + K.T)
    s = np.linalg.svd(P, compute_uv=False)
    smin = s[-1] if P.shape[0] <= P.shape[1] else 0.0
    return K, float(eps ** 2 * smin ** 2)


def ntk_certified_positive(support: SupportSet, xs, t: float, eps: float, margin: float = 100.0) -> bool:
    """sigma_min(P) > margin * n * u * sigma_max(P): positivity that survives rounding."""
    P = gibbs_matrix(support, xs, t, eps)
    if P.shape[0] > P.shape[1]:
        return False
    s = np.linalg.svd(P, compute_uv=False)
    return bool(s[-1] > margin * P.shape[0] * np.finfo(float).eps * s[0])


def fixed_support_hessian(support: SupportSet, x, t: float, eps: float) -> np.ndarray:
    """eps (diag pi - pi pi^T)."""
    pi = gibbs_weights(support, x, t, eps).pi
    return eps * (np.diag(pi) - np.outer(pi, pi))


# -- entropy landscape

@dataclass(frozen=True, eq=False)
class CriticalPoint:
    location: np.ndarray
    morse_type: str  # minimum | saddle | maximum
    entropy: float
    eigenvalues: np.ndarray
    grad_norm: float
    degenerate: bool = False

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def min_abs_eigenvalue(self) -> float:
        return float(np.abs(self.eigenvalues).min())


def _classify(ev):
    if np.all(ev > CLASSIFY_TOL):
        return "minimum", False
    if np.all(ev < -CLASSIFY_TOL):
        return "maximum", False
    if np.all(np.abs(ev) > CLASSIFY_TOL):
        return "saddle", False
    return ("minimum" if ev.max() <= CLASSIFY_TOL and ev.min() >= -CLASSIFY_TOL else "saddle"), True


class _Landscape:
    def __init__(self, support, t, eps):
        self.Y = support.atoms
        self.g = support.values
        self.t, self.eps = t, eps
        self.d = support.dim
        diam = support.diameter()
        self.scale = diam if diam > 0 else 1.0
        self.h = FD_REL_STEP * self.scale

    def grad(self, X):
        return kernels.entropy_batch(np.ascontiguousarray(X), self.Y, self.g, self.t, self.eps)

    def hessian(self, X):
        m, d, h = X.shape[0], self.d, self.h
        P = np.empty((2 * d, m, d))
        for k in range(d):
            P[2 * k] = X
            P[2 * k, :, k] += h
            P[2 * k + 1] = X
            P[2 * k + 1, :, k] -= h
        _, G = self.grad(P.reshape(-1, d))
        G = G.reshape(2 * d, m, d)
        Hs = np.stack([(G[2 * k] - G[2 * k + 1]) / (2 * h) for k in range(d)], axis=1)
        return 0.5 * (Hs + np.swapaxes(Hs, 1, 2))

    def newton(self, seeds, lo, hi):
        """Damped Newton on grad H from every seed at once.

        Returns (points, grad norms, converged mask).
        """
        X = np.array(seeds, dtype=np.float64, copy=True)
        m = X.shape[0]
        gnorm = np.full(m, np.inf)
        done = np.zeros(m, dtype=bool)
        alive = np.ones(m, dtype=bool)
        far_lo, far_hi = lo - ESCAPE_REL * self.scale, hi + ESCAPE_REL * self.scale
        for _ in range(MAX_NEWTON):
            idx = np.flatnonzero(alive & ~done)
            if idx.size == 0:
                break
            Xa = X[idx]
            H, G = self.grad(Xa)
            n0 = np.sqrt((G ** 2).sum(axis=1))
            gnorm[idx] = n0
            # a flat tail: any critical point found there would be degenerate
            flat = H < FLAT_H
            alive[idx[flat]] = False
            idx, Xa, G, n0 = idx[~flat], Xa[~flat], G[~flat], n0[~flat]
            if idx.size == 0:
                break
            w, V = np.linalg.eigh(self.hessian(Xa))
            w = np.where(np.abs(w) < 1e-300, 1e-300, w)
            step = -np.einsum("mij,mj->mi", V, np.einsum("mji,mj->mi", V, G) / w)
            slen = np.sqrt((step ** 2).sum(axis=1))
            # a small gradient alone is not enough: on the exponentially flat
            # tail |grad H| is tiny while Newton still wants to move by ~t eps
            conv = (n0 <= GRAD_TOL) & (slen <= STEP_TOL * self.scale)
            done[idx[conv]] = True
            keep = ~conv
            idx, Xa, n0, step, slen = idx[keep], Xa[keep], n0[keep], step[keep], slen[keep]
            if idx.size == 0:
                break
            # near-singular Hessians give huge Newton steps; the direction
            # still decreases |grad H|, so cap its length before backtracking
            cap = MAX_STEP_REL * self.scale
            step *= np.minimum(1.0, cap / np.maximum(slen, 1e-300))[:, None]
            lam = np.ones(idx.size)
            accepted = np.zeros(idx.size, dtype=bool)
            Xn = Xa.copy()
            for _ in range(MAX_HALVINGS):
                pend = ~accepted
                if not pend.any():
                    break
                trial = Xa[pend] + lam[pend, None] * step[pend]
                _, Gt = self.grad(trial)
                ok = np.sqrt((Gt ** 2).sum(axis=1)) < n0[pend]
                sel = np.flatnonzero(pend)
                Xn[sel[ok]] = trial[ok]
                accepted[sel[ok]] = True
                lam[sel[~ok]] *= 0.5
            alive[idx[~accepted]] = False
            X[idx[accepted]] = Xn[accepted]
            escaped = np.any((X[idx] < far_lo) | (X[idx] > far_hi), axis=1)
            alive[idx[escaped]] = False
        return X, gnorm, done


def _bounding_box(support, pad_rel=None):
    diam = support.diameter()
    pad = (HULL_PAD if pad_rel is None else pad_rel) * (diam if diam > 0 else 1.0)
    return support.atoms.min(axis=0) - pad, support.atoms.max(axis=0) + pad


def default_seed_grid(support: SupportSet, per_axis: int | None = None) -> np.ndarray:
    """Regular grid over the padded bounding box of the atoms, plus the atoms."""
    lo, hi = _bounding_box(support, SEED_PAD)
    d = support.dim
    if per_axis is None:
        per_axis = 201 if d == 1 else 21
    axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return np.vstack([grid, support.atoms])


def find_critical_points(support: SupportSet, t: float, eps: float, seed_grid=None,
                         diagnostics: dict | None = None) -> list[CriticalPoint]:
    """Non-degenerate critical points of H(.; eps) reached from the seeds.

    Degenerate points (some |Hessian eigenvalue| <= 1e-8) are left out and
    counted in ``diagnostics``. A landscape that is flat to rounding (N = 1)
    is reported as one degenerate point at the atoms' centroid.
    """
    _check_te(t, eps)
    if support.dim not in (1, 2):
        raise ValueError("landscape analysis is restricted to d in {1, 2}")
    seeds = default_seed_grid(support) if seed_grid is None else _points(seed_grid, support.dim)[0]
    land = _Landscape(support, t, eps)
    lo, hi = _bounding_box(support)
    stats = {"seeds": int(seeds.shape[0]), "nonconvergent": 0, "outside": 0,
             "degenerate": 0, "duplicates": 0}

    H_seed, _ = land.grad(seeds)
    if support.size == 1 or np.max(H_seed) < 1e-12:
        c = support.atoms.mean(axis=0)
        Hc, Gc = land.grad(c[None, :])
        ev = np.linalg.eigvalsh(land.hessian(c[None, :])[0])
        stats["flat"] = True
        if diagnostics is not None:
            diagnostics.update(stats)
        return [CriticalPoint(c, "minimum", float(Hc[0]), ev, float(np.linalg.norm(Gc[0])), True)]

    X, gn, ok = land.newton(seeds, lo, hi)
    stats["nonconvergent"] = int((~ok).sum())
    X, gn = X[ok], gn[ok]
    inside = np.all((X >= lo) & (X <= hi), axis=1)
    stats["outside"] = int((~inside).sum())
    X, gn = X[inside], gn[inside]

    radius = DEDUP_REL * land.scale
    kept = []
    for i in range(X.shape[0]):
        if any(np.linalg.norm(X[i] - X[j]) < radius for j in kept):
            stats["duplicates"] += 1
            continue
        kept.append(i)
    X, gn = X[kept], gn[kept]
    points = []
    if X.shape[0]:
        Hv, _ = land.grad(X)
        evs = np.linalg.eigvalsh(land.hessian(X))
        for x, h, ev, n in zip(X, Hv, evs, gn):
            kind, degenerate = _classify(ev)
            if degenerate:
                stats["degenerate"] += 1
                continue
            points.append(CriticalPoint(x.copy(), kind, float(h), ev, float(n)))
    # deterministic order independent of seed order
    points.sort(key=lambda p: tuple(np.round(p.location, 12)))
    stats["found"] = len(points)
    if diagnostics is not None:
        diagnostics.update(stats)
    log.debug("critical points at eps=%g: %s", eps, stats)
    return points


@dataclass(frozen=True, eq=False)
class FoldEvent:
    index: int  # grid index where the count has dropped
    eps_interval: tuple[float, float]  # bisection bracket of the drop
    count_before: int
    count_after: int
    grid_signature: bool  # min |saddle eig| at index-1 is minimal over its plateau
    refined_min_saddle_eig: float  # min |saddle eig| at the bracket's lower end
    signature_ok: bool  # refined value is minimal over the plateau


@dataclass(frozen=True, eq=False)
class BifurcationTrace:
    eps: np.ndarray
    points: list
    folds: list = field(default_factory=list)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.points])

    def type_counts(self, k):
        kinds = [p.morse_type for p in self.points[k]]
        return kinds.count("minimum"), kinds.count("saddle"), kinds.count("maximum")

    def min_abs_saddle_eig(self, k) -> float:
        vals = [p.min_abs_eigenvalue for p in self.points[k] if p.morse_type == "saddle"]
        return min(vals) if vals else math.nan

    def counts_nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.counts) <= 0))

    def signatures_ok(self) -> bool:
        return all(f.signature_ok for f in self.folds)

    def grid_signatures_ok(self) -> bool:
        return all(f.grid_signature for f in self.folds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "count", "n_min", "n_saddle", "n_max", "min_abs_saddle_eig"])
        for k, e in enumerate(self.eps):
            m, s, M = self.type_counts(k)
            w.writerow([repr(float(e)), len(self.points[k]), m, s, M, repr(float(self.min_abs_saddle_eig(k)))])
        return buf.getvalue()

    def points_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.points[0][0].location.shape[0] if self.points and self.points[0] else 1
        w.writerow(["eps"] + [f"x{k}" for k in range(d)] + ["type", "entropy", "min_eig"])
        for e, pts in zip(self.eps, self.points):
            for p in pts:
                w.writerow([repr(float(e))] + [repr(float(v)) for v in p.location]
                           + [p.morse_type, repr(float(p.entropy)), repr(float(p.min_eigenvalue))])
        return buf.getvalue()


def _locations(pts, d):
    return np.array([p.location for p in pts]).reshape(-1, d)


def bifurcation_sweep(support: SupportSet, t: float, eps_grid, seed_grid=None,
                      continuation_passes: int = 2, bisections: int = 10) -> BifurcationTrace:
    """Critical-point counts across an increasing eps grid.

    Every grid point is also seeded with the critical points found at its
    neighbours (forward then backward passes), which recovers points that the
    fixed seed grid misses near a merge.
    """
    E = np.asarray(eps_grid, dtype=np.float64)
    if E.ndim != 1 or E.size < 10:
        raise ValueError("eps grid needs at least 10 points")
    if np.any(np.diff(E) <= 0):
        raise ValueError("eps grid must be strictly increasing")
    d = support.dim
    base = default_seed_grid(support) if seed_grid is None else _points(seed_grid, d)[0]
    res = [find_critical_points(support, t, e, base) for e in E]
    n = E.size
    order = list(range(1, n)) + list(range(n - 2, -1, -1))
    for _ in range(continuation_passes):
        for k in order:
            extra = [_locations(res[k], d)]
            if k > 0:
                extra.append(_locations(res[k - 1], d))
            if k < n - 1:
                extra.append(_locations(res[k + 1], d))
            res[k] = find_critical_points(support, t, E[k], np.vstack(extra + [base]))

    trace = BifurcationTrace(E, res)
    counts = trace.counts
    sad = np.array([trace.min_abs_saddle_eig(k) for k in range(n)])
    folds = []
    k0 = 0  # start of the current plateau of equal counts
    for k in range(1, n):
        if counts[k] == counts[k - 1]:
            continue
        if counts[k] < counts[k - 1]:
            plateau = sad[k0:k]
            finite = plateau[np.isfinite(plateau)]
            pmin = finite.min() if finite.size else math.inf
            grid_sig = bool(finite.size == 0 or (np.isfinite(sad[k - 1]) and sad[k - 1] <= pmin))
            interval, pts_lo = _bisect_fold(support, t, E[k - 1], E[k], counts[k - 1],
                                            res[k - 1], res[k], base, bisections)
            vals = [p.min_abs_eigenvalue for p in pts_lo if p.morse_type == "saddle"]
            refined = min(vals) if vals else math.nan
            sig = bool(finite.size == 0 or (vals and refined <= pmin))
            folds.append(FoldEvent(k, interval, int(counts[k - 1]), int(counts[k]),
                                   grid_sig, refined, sig))
        k0 = k
    return BifurcationTrace(E, res, folds)


def _bisect_fold(support, t, e_lo, e_hi, count_lo, pts_lo, pts_hi, base, bisections):
    """Bracket the drop by bisection in log eps; also return the points at the lower end."""
    d = support.dim
    seeds = np.vstack([_locations(pts_lo, d), _locations(pts_hi, d), base])
    lo, hi = math.log(e_lo), math.log(e_hi)
    at_lo = pts_lo
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        pts = find_critical_points(support, t, math.exp(mid), seeds)
        if len(pts) >= count_lo:
            lo, at_lo = mid, pts
        else:
            hi = mid
        seeds = np.vstack([_locations(pts, d), seeds])
    return (math.exp(lo), math.exp(hi)), at_lo


def two_cluster_support(seed: int, n_per_cluster: int = 8, spread: float = 0.35,
                        separation: float = 1.0) -> SupportSet:
    """Two Gaussian clusters at (+-separation, 0) with g = 0."""
    rng = np.random.default_rng(seed)
    Y = np.vstack([rng.normal([-separation, 0.0], spread, (n_per_cluster, 2)),
                   rng.normal([separation, 0.0], spread, (n_per_cluster, 2))])
    return SupportSet(Y, np.zeros(2 * n_per_cluster))
