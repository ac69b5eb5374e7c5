"""Quadrature view of the LSE layer: grid supports, a dense continuum
reference, convergence and viscosity-bias curves, power-law fits and a
Feynman-Kac Monte Carlo estimator.

The discrete layer omits the measure normalization, so it differs from the
continuum solution by an x-independent constant. Errors are therefore
measured after removing the mean over the evaluation grid ("relative"
convention); only the spatial shape of u is compared.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import SupportSet, _check_te, hopf_cole_solution, hopf_lax

ORACLE_MIN_RES = 256
ORACLE_TOL = 1e-8


class OracleResolutionWarning(UserWarning):
    """Doubling the oracle resolution moved the value by more than 1e-8."""


def _box(box, d):
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,)).copy()
    if np.any(hi <= lo):
        raise ValueError(f"degenerate box {box}")
    return lo, hi


def _grid(lo, hi, n):
    axes = [np.linspace(lo[k], hi[k], n) for k in range(lo.shape[0])]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.shape[0]), axes


def per_axis_count(n: int, d: int) -> int:
    """floor(N^(1/d)) in exact integer arithmetic."""
    k = int(round(n ** (1.0 / d)))
    while k ** d > n:
        k -= 1
    while (k + 1) ** d <= n:
        k += 1
    return k


def _eval_g(g_fn, Y):
    g = np.asarray(g_fn(Y), dtype=np.float64).reshape(-1)
    if g.shape[0] != Y.shape[0]:
        raise ValueError("g_fn must map an (M, d) array of points to M values")
    return g


def grid_support(g_fn, box, n: int, d: int) -> SupportSet:
    """Regular grid with floor(N^(1/d)) points per axis, endpoints included.

    ``g_fn`` is vectorized: it maps an (M, d) array to M values.
    """
    if d < 1 or n < 2 ** d:
        raise ValueError(f"need N >= 2^d, got N={n}, d={d}")
    lo, hi = _box(box, d)
    Y, _ = _grid(lo, hi, per_axis_count(n, d))
    g = _eval_g(g_fn, Y)
    bad = ~np.isfinite(g)
    if np.any(bad):
        raise ValueError(f"g_fn is not finite at grid point {Y[np.argmax(bad)].tolist()}")
    return SupportSet(Y, g)


def padded_box(points, eps: float, t: float, margin: float = 5.0):
    """Query hull enlarged by ``margin`` standard deviations sqrt(2 eps t) of the heat kernel."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    pad = margin * math.sqrt(2.0 * eps * t)
    return P.min(axis=0) - pad, P.max(axis=0) + pad


def _oracle(g_fn, X, t, eps, res, lo, hi):
    Y, axes = _grid(lo, hi, res)
    logw = np.zeros(Y.shape[0])
    parts = []
    for ax in axes:
        w = np.full(res, ax[1] - ax[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        parts.append(np.log(w))
    logw = np.add.reduce(np.meshgrid(*parts, indexing="ij")).reshape(-1)
    # trapezoid weights folded into the exponent: g' = g - eps log w
    g = _eval_g(g_fn, Y) - eps * logw
    u, _ = kernels.hc_batch(np.ascontiguousarray(X), Y, g, t, eps)
    return u


def continuum_oracle(g_fn, x, t: float, eps: float, resolution: int = 512, box=(-2.0, 2.0),
                     check: bool = True):
    """Trapezoid quadrature of -eps log int exp(-(g(y) + |x-y|^2/(4t))/eps) dy over ``box``.

    Accepts a point or an (m, d) batch; d <= 2. With ``check`` the value is
    recomputed at twice the resolution and an :class:`OracleResolutionWarning`
    is issued if it moves by more than 1e-8.
    """
    _check_te(t, eps)
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = X.shape[1]
    if d > 2:
        raise ValueError("the dense continuum oracle supports d <= 2")
    if resolution < ORACLE_MIN_RES:
        raise ValueError(f"oracle resolution must be >= {ORACLE_MIN_RES} per axis")
    lo, hi = _box(box, d)
    u = _oracle(g_fn, X, t, eps, resolution, lo, hi)
    if check:
        u2 = _oracle(g_fn, X, t, eps, 2 * resolution, lo, hi)
        change = float(np.max(np.abs(u2 - u)))
        if change > ORACLE_TOL:
            warnings.warn(f"continuum oracle changed by {change:.3e} when resolution doubled "
                          f"from {resolution}", OracleResolutionWarning, stacklevel=2)
    return float(u[0]) if np.ndim(x) <= 1 else u


def heat_normalization(eps: float, t: float, d: int) -> float:
    """(eps d/2) log(4 pi eps t): shift from the unnormalized to the heat-kernel-normalized solution."""
    return 0.5 * eps * d * math.log(4.0 * math.pi * eps * t)


def relative_sup_error(a, b) -> float:
    """sup |e - mean(e)| with e = a - b (the x-independent constant removed)."""
    e = np.asarray(a) - np.asarray(b)
    return float(np.max(np.abs(e - e.mean())))


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    N: np.ndarray
    errors: np.ndarray
    d: int
    eps_rule: str
    t: float
    eps: np.ndarray
    slope: float | None
    norm: str = "relative sup over eval grid"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "error"])
        for n, e in zip(self.N, self.errors):
            w.writerow([int(n), repr(float(e))])
        return buf.getvalue()


def log_log_slope(N, err) -> float | None:
    N = np.asarray(N, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if N.size < 2 or np.any(err <= 0):
        return None
    return float(np.polyfit(np.log(N), np.log(err), 1)[0])


def default_eval_grid(d: int, box=(-2.0, 2.0), per_axis: int | None = None) -> np.ndarray:
    """Regular grid over the interior 80% of the box (101 points in 1-D, 21 per axis in 2-D)."""
    lo, hi = _box(box, d)
    if per_axis is None:
        per_axis = 101 if d == 1 else 21
    c, r = 0.5 * (lo + hi), 0.4 * (hi - lo)
    X, _ = _grid(c - r, c + r, per_axis)
    return X


def quadrature_error_curve(g_fn, d: int, t: float, Ns, eps_rule: str = "scaled", eps: float | None = None,
                           eval_grid=None, box=(-2.0, 2.0), oracle_factor: int = 10,
                           max_oracle_res: int | None = None) -> ErrorCurve:
    """Relative sup error of the grid-support layer against the continuum oracle, per N.

    ``eps_rule`` is ``"scaled"`` (eps = N^(-1/d) with the actual atom count)
    or ``"fixed"`` (uses ``eps``). The oracle integrates over the same box at
    ``max(256, oracle_factor * n)`` points per axis.
    """
    _check_te(t)
    if d not in (1, 2):
        raise ValueError("quadrature curves are implemented for d in {1, 2}")
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("Ns must be strictly increasing")
    if eps_rule not in ("scaled", "fixed"):
        raise ValueError(f"unknown eps rule {eps_rule!r}")
    if eps_rule == "fixed" and not (eps and eps > 0):
        raise ValueError("fixed eps rule needs eps > 0")
    lo, hi = _box(box, d)
    X = default_eval_grid(d, box) if eval_grid is None else np.atleast_2d(np.asarray(eval_grid, float))
    actual, errs, epss = [], [], []
    for n in Ns:
        sup = grid_support(g_fn, box, n, d)
        e = sup.size ** (-1.0 / d) if eps_rule == "scaled" else float(eps)
        k = per_axis_count(n, d)
        res = max(ORACLE_MIN_RES, oracle_factor * k)
        if max_oracle_res is not None:
            res = min(res, max_oracle_res)
        u_n = hopf_cole_solution(sup, X, t, e)
        u_c = _oracle(g_fn, X, t, e, res, lo, hi)
        actual.append(sup.size)
        errs.append(relative_sup_error(u_n, u_c))
        epss.append(e)
    return ErrorCurve(np.array(actual), np.array(errs), d, eps_rule, float(t), np.array(epss),
                      log_log_slope(actual, errs))


@dataclass(frozen=True, eq=False)
class BiasCurve:
    eps: np.ndarray
    deviation: np.ndarray
    C: float  # geometric mean of deviation/eps

    @property
    def ratios(self) -> np.ndarray:
        return self.deviation / self.eps

    def within_factor(self, factor: float = 3.0) -> bool:
        r = self.ratios
        if self.C == 0.0:
            return bool(np.all(r == 0.0))
        return bool(np.all((r >= self.C / factor) & (r <= self.C * factor)))


def viscosity_bias_curve(support: SupportSet, x_grid, t: float, eps_list) -> BiasCurve:
    """sup_x |u_eps - u_0| per eps; the deviation lies in [0, eps log N]."""
    E = np.asarray(eps_list, dtype=np.float64)
    if np.any(np.diff(E) >= 0):
        raise ValueError("eps_list must be strictly decreasing")
    X = np.atleast_2d(np.asarray(x_grid, dtype=np.float64))
    if X.shape[1] != support.dim:
        X = X.reshape(-1, support.dim)
    u0, _ = hopf_lax(support, X, t)
    dev = np.array([float(np.max(np.abs(hopf_cole_solution(support, X, t, e) - u0))) for e in E])
    r = dev / E
    C = float(np.exp(np.mean(np.log(r)))) if np.all(r > 0) else 0.0
    return BiasCurve(E, dev, C)


@dataclass(frozen=True)
class ScalingFit:
    alpha: float
    intercept: float
    r_squared: float

    @property
    def d_eff(self) -> float:
        return math.inf if self.alpha == 0 else 1.0 / self.alpha

    def to_json(self) -> str:
        return json.dumps({"alpha": self.alpha, "intercept": self.intercept,
                           "r_squared": self.r_squared, "d_eff": self.d_eff})


def scaling_fit(points) -> ScalingFit:
    """Least squares on (log N, log loss); alpha = -slope."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 2 or P.shape[0] < 3:
        raise ValueError("need at least three (N, loss) points")
    if np.any(P[:, 1] <= 0) or np.any(P[:, 0] <= 0):
        raise ValueError("N and loss must be positive")
    lx, ly = np.log(P[:, 0]), np.log(P[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    ss_res = float((resid ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return ScalingFit(float(-slope), float(intercept), r2)


def d_eff_from_alpha(alpha: float) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return 1.0 / alpha


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator used for every Monte Carlo draw (64-bit seed)."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def feynman_kac_mc(g_fn, x, t: float, eps: float, n_samples: int, seed: int):
    """-eps log E[exp(-g(Y)/eps)], Y ~ N(x, 2 eps t I), with delta-method standard error.

    This is the heat-kernel-normalized solution: it equals the unnormalized
    Hopf-Cole value plus :func:`heat_normalization`.
    """
    _check_te(t, eps)
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    rng = philox(seed)
    Y = x[None, :] + math.sqrt(2.0 * eps * t) * rng.standard_normal((n_samples, x.shape[0]))
    g = _eval_g(g_fn, Y)
    m = g.min()
    w = np.exp(-(g - m) / eps)
    mean = w.mean()
    est = m - eps * math.log(mean)
    se = eps * w.std(ddof=1) / (math.sqrt(n_samples) * mean)
    return float(est), float(se)


def quadratic_fk_closed_form(a: float, x: float, t: float, eps: float) -> float:
    """Normalized solution for g(y) = a y^2 in d = 1: (eps/2) log(1 + 4at) + a x^2/(1 + 4at)."""
    return 0.5 * eps * math.log1p(4.0 * a * t) + a * x * x / (1.0 + 4.0 * a * t)


@dataclass(frozen=True)
class MatchedScaleReport:
    posterior_mean: np.ndarray
    posterior_var: float
    target_mean: np.ndarray
    target_var: float
    mean_se: float
    var_se: float
    ess: float

    def consistent(self, k: float = 4.0) -> bool:
        dm = float(np.max(np.abs(self.posterior_mean - self.target_mean)))
        return dm <= k * self.mean_se and abs(self.posterior_var - self.target_var) <= k * self.var_se


def matched_scale_check(x, t: float, eps: float, n_atoms: int, seed: int) -> MatchedScaleReport:
    """Atoms drawn from the prior N(0, q* I), q* = 2 eps t, weighted by the g = 0 Gibbs weights.

    The weighted atoms sample the Gaussian posterior with mean x/2 and
    per-coordinate variance eps t.
    """
    _check_te(t, eps)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = x.shape[0]
    rng = philox(seed)
    Y = math.sqrt(2.0 * eps * t) * rng.standard_normal((n_atoms, d))
    a = -((Y - x) ** 2).sum(axis=1) / (4.0 * eps * t)
    p = np.exp(a - a.max())
    p /= p.sum()
    mean = p @ Y
    dev = Y - mean
    var = float((p @ (dev ** 2)).sum() / d)
    ess = 1.0 / float((p ** 2).sum())
    tv = eps * t
    mean_se = math.sqrt(tv / ess)
    # Gaussian fourth moment: Var(z^2) = 2 sigma^4 per coordinate
    var_se = math.sqrt(2.0 * tv ** 2 / (ess * d))
    return MatchedScaleReport(mean, var, x / 2.0, tv, mean_se, var_se, ess)
