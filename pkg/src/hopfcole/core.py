"""Log-sum-exp layers built as exact Hopf-Cole solutions.

A :class:`SupportSet` holds the atoms ``y_j`` and initial values ``g_j`` of a
discrete initial-data measure. :func:`build_network` turns it into an
:class:`HJNetwork` whose forward pass ``eps * log sum exp((W x + b)/eps)``
equals ``quad(x) - u(x)`` with ``u`` the viscous Hamilton-Jacobi solution
under that measure. Everything else here evaluates one side or the other of
that identity, or its ``eps -> 0`` (min-plus) limit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

MAX_METRIC_CONDITION = 1e12


class SupportError(ValueError):
    """Invalid atoms/values for a discrete initial-data measure."""


class MetricError(ValueError):
    """Matrix is not an acceptable symmetric positive-definite metric."""


def _points(x, d):
    """Return ``(X, single)`` with X of shape (m, d)."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim <= 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return np.ascontiguousarray(X), single


def _unwrap(values, single):
    return float(values[0]) if single else values


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Atoms ``y_j`` in R^d with initial values ``g_j = g(y_j)``."""

    atoms: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise SupportError(f"atoms must be a non-empty (N, d) array, got shape {atoms.shape}")
        if values.shape[0] != atoms.shape[0]:
            raise SupportError(
                f"{atoms.shape[0]} atoms but {values.shape[0]} values")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(values))):
            raise SupportError("atoms and values must be finite")
        if atoms.shape[0] > 1:
            # exact duplicate rows after sorting is enough: distinct means min distance > 0
            order = np.lexsort(atoms.T[::-1])
            srt = atoms[order]
            dup = np.all(srt[1:] == srt[:-1], axis=1)
            if np.any(dup):
                k = int(order[np.argmax(dup) + 1])
                raise SupportError(f"duplicate atom at index {k}: {atoms[k].tolist()}")
        object.__setattr__(self, "atoms", _readonly(atoms))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.size

    def diameter(self) -> float:
        if self.size == 1:
            return 0.0
        diff = self.atoms[:, None, :] - self.atoms[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def with_values(self, values) -> "SupportSet":
        return SupportSet(self.atoms, values)

    # -- CSV: header y_0,...,y_{d-1},g ; one atom per row
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"y_{k}" for k in range(self.dim)] + ["g"])
        for y, g in zip(self.atoms, self.values):
            w.writerow([repr(float(v)) for v in y] + [repr(float(g))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "SupportSet":
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text()
        else:
            text = source
        rows = list(csv.reader(io.StringIO(text)))
        header = [h.strip() for h in rows[0]]
        d = len(header) - 1
        if d < 1 or header[-1] != "g" or header[:-1] != [f"y_{k}" for k in range(d)]:
            raise SupportError(f"bad support CSV header: {header}")
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
        if body.size == 0:
            raise SupportError("support CSV has no atoms")
        return cls(body[:, :d], body[:, d])


@dataclass(frozen=True, eq=False)
class Metric:
    """Symmetric positive-definite matrix A of an anisotropic Hamiltonian p^T A p."""

    matrix: np.ndarray
    inverse: np.ndarray = field(init=False)
    lambda_min: float = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise MetricError(f"metric must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise MetricError("metric has non-finite entries")
        asym = np.max(np.abs(A - A.T))
        if asym > 1e-12 * max(1.0, np.max(np.abs(A))):
            raise MetricError(f"metric is not symmetric (max asymmetry {asym:.3e})")
        A = 0.5 * (A + A.T)
        w = np.linalg.eigvalsh(A)
        if w[0] <= 0:
            raise MetricError(f"metric is not positive definite (min eigenvalue {w[0]:.3e})")
        cond = w[-1] / w[0]
        if cond > MAX_METRIC_CONDITION:
            raise MetricError(f"metric condition number {cond:.3e} exceeds {MAX_METRIC_CONDITION:.0e}")
        inv = np.linalg.inv(A)
        inv = 0.5 * (inv + inv.T)
        object.__setattr__(self, "matrix", _readonly(A))
        object.__setattr__(self, "inverse", _readonly(inv))
        object.__setattr__(self, "lambda_min", float(w[0]))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class HJNetwork:
    """Single LSE layer ``x -> eps*log sum_j exp((W_j.x + b_j)/eps)``.

    ``t`` and ``metric`` are not used by the forward pass; they fix the
    Hamilton-Jacobi reading (``quad``) of the same layer.
    """

    W: np.ndarray
    b: np.ndarray
    eps: float
    t: float
    metric: Metric | None = None
    support: SupportSet | None = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim == 1:
            W = W[:, None]
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or W.shape[0] != b.shape[0] or W.shape[0] == 0:
            raise ValueError(f"weights {W.shape} and biases {b.shape} disagree")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ValueError(f"viscosity eps must be positive, got {self.eps}")
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"time t must be positive, got {self.t}")
        if self.metric is not None and self.metric.dim != W.shape[1]:
            raise MetricError(f"metric is {self.metric.dim}-dimensional, weights are {W.shape[1]}")
        object.__setattr__(self, "W", _readonly(W))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "t", float(self.t))

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def row_norm_max(self) -> float:
        """max_j ||W_j||_2."""
        return float(np.sqrt((self.W ** 2).sum(axis=1)).max())

    def logits(self, x):
        X, single = _points(x, self.dim)
        Z = X @ self.W.T + self.b
        return Z[0] if single else Z

    def __call__(self, x):
        return lse_forward(self, x)

    def to_json(self, path=None) -> str:
        doc = {
            "d": self.dim,
            "N": self.width,
            "t": self.t,
            "eps": self.eps,
            "W": [float(v) for v in self.W.ravel()],
            "b": [float(v) for v in self.b],
        }
        if self.metric is not None:
            doc["metric"] = [float(v) for v in self.metric.matrix.ravel()]
        text = json.dumps(doc, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "HJNetwork":
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        doc = json.loads(source)
        d, n = int(doc["d"]), int(doc["N"])
        W = np.asarray(doc["W"], dtype=np.float64).reshape(n, d)
        metric = doc.get("metric")
        if metric is not None:
            metric = Metric(np.asarray(metric, dtype=np.float64).reshape(d, d))
        return cls(W, doc["b"], float(doc["eps"]), float(doc["t"]), metric)


def _metric_inverse(metric, d):
    if metric is None:
        return None
    if not isinstance(metric, Metric):
        metric = Metric(metric)
    if metric.dim != d:
        raise MetricError(f"metric is {metric.dim}-dimensional, support is {d}")
    return metric.inverse


def _check_te(t, eps=None):
    if not (t > 0 and math.isfinite(t)):
        raise ValueError(f"time t must be positive, got {t}")
    if eps is not None and not (eps > 0 and math.isfinite(eps)):
        raise ValueError(f"viscosity eps must be positive, got {eps}")


def build_network(support: SupportSet, t: float, eps: float, metric=None) -> HJNetwork:
    """Weights ``A^-1 y_j / (2t)`` and biases ``-g_j - y_j^T A^-1 y_j / (4t)``."""
    _check_te(t, eps)
    if metric is not None and not isinstance(metric, Metric):
        metric = Metric(metric)
    Y = support.atoms
    Ainv = _metric_inverse(metric, support.dim)
    AY = Y if Ainv is None else Y @ Ainv  # Ainv symmetric, rows are A^-1 y_j
    W = AY / (2.0 * t)
    b = -support.values - np.einsum("jk,jk->j", Y, AY) / (4.0 * t)
    return HJNetwork(W, b, eps, t, metric, support)


def quad(x, t: float, metric=None):
    """|x|^2/(4t), or x^T A^-1 x/(4t) under a metric."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Ainv = _metric_inverse(metric, X.shape[1])
    q = np.einsum("mk,mk->m", X, X if Ainv is None else X @ Ainv) / (4.0 * t)
    return float(q[0]) if np.ndim(x) <= 1 else q


def lse_forward(net: HJNetwork, x):
    """Max-shifted ``eps * log sum_j exp((W_j.x + b_j)/eps)`` at one point or a batch."""
    X, single = _points(x, net.dim)
    f, _ = kernels.lse_affine_batch(X, net.W, net.b, net.eps)
    return _unwrap(f, single)


def hopf_cole_solution(support: SupportSet, x, t: float, eps: float, metric=None):
    """``-eps*log sum_j exp(-(g_j + cost(x, y_j))/eps)`` with cost |x-y|^2/(4t)."""
    _check_te(t, eps)
    X, single = _points(x, support.dim)
    Ainv = _metric_inverse(metric, support.dim)
    u, _ = kernels.hc_batch(X, support.atoms, support.values, t, eps, Ainv)
    return _unwrap(u, single)


def identity_residual(support: SupportSet, x, t: float, eps: float, metric=None):
    """|lse_forward + hopf_cole_solution - quad| evaluated independently on each side."""
    net = build_network(support, t, eps, metric)
    f = lse_forward(net, x)
    u = hopf_cole_solution(support, x, t, eps, metric)
    r = np.abs(f + u - quad(x, t, metric))
    return float(r) if np.ndim(r) == 0 else r


def hopf_lax(support: SupportSet, x, t: float):
    """Exact ``min_j {g_j + |x - y_j|^2/(4t)}`` and its (lowest) minimizing index."""
    _check_te(t)
    X, single = _points(x, support.dim)
    diff = X[:, None, :] - support.atoms[None, :, :]
    F = support.values[None, :] + np.einsum("mnk,mnk->mn", diff, diff) / (4.0 * t)
    idx = np.argmin(F, axis=1)  # first occurrence on ties
    val = F[np.arange(F.shape[0]), idx]
    if single:
        return float(val[0]), int(idx[0])
    return val, idx


def tropical_gap(net: HJNetwork, x):
    """(lse_forward - max logit, eps*log N); the gap always lies in [0, bound]."""
    X, single = _points(x, net.dim)
    f, _ = kernels.lse_affine_batch(X, net.W, net.b, net.eps)
    zmax = (X @ net.W.T + net.b).max(axis=1)
    gap = np.maximum(f - zmax, 0.0)
    bound = net.eps * math.log(net.width)
    return (float(gap[0]) if single else gap), bound


def softplus(u, eps: float = 1.0):
    """``eps * log(1 + exp(u/eps))`` without overflow."""
    u = np.asarray(u, dtype=np.float64)
    out = np.maximum(u, 0.0) + eps * np.log1p(np.exp(-np.abs(u) / eps))
    return float(out) if out.ndim == 0 else out


def measure_extend(net: HJNetwork, new_weight, new_bias: float, x, cached_f: float):
    """O(1) output update after appending one neuron, given the cached output at x.

    Returns ``(new_f, shift)`` with ``shift = softplus_eps(z0 - cached_f)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    w0 = np.asarray(new_weight, dtype=np.float64).reshape(-1)
    if w0.shape[0] != x.shape[0]:
        raise ValueError("new weight and x have different dimensions")
    z0 = float(w0 @ x) + float(new_bias)
    shift = softplus(z0 - cached_f, net.eps)
    return cached_f + shift, shift


def append_neuron(net: HJNetwork, new_weight, new_bias: float) -> HJNetwork:
    W = np.vstack([net.W, np.asarray(new_weight, dtype=np.float64).reshape(1, -1)])
    return HJNetwork(W, np.append(net.b, new_bias), net.eps, net.t, net.metric)


@dataclass(frozen=True)
class HallucinationReport:
    gap_delta: float
    bound: float
    actual_deviation: float
    dominant_index: int
    degenerate: bool

    @property
    def holds(self) -> bool:
        # rounding slack: both sides are O(eps) quantities near a tie
        return self.actual_deviation <= self.bound + 4 * np.finfo(float).eps * max(1.0, self.bound)


def hallucination_bound(support: SupportSet, x, t: float, eps: float,
                        tie_tol: float = 1e-12) -> HallucinationReport:
    """Distance of the layer output from the dominant neuron's affine extrapolation."""
    _check_te(t, eps)
    if support.size < 2:
        raise SupportError("hallucination bound needs at least two atoms")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    diff = support.atoms - x[None, :]
    F = support.values + np.einsum("jk,jk->j", diff, diff) / (4.0 * t)
    jstar = int(np.argmin(F))
    others = np.delete(F, jstar)
    delta = float(others.min() - F[jstar])
    degenerate = delta <= tie_tol
    if degenerate:
        delta = 0.0
    n = support.size
    # eps*log(1 + (N-1) e^{-delta/eps})
    bound = eps * math.log1p((n - 1) * math.exp(-delta / eps))
    net = build_network(support, t, eps)
    actual = abs(lse_forward(net, x) - float(net.W[jstar] @ x + net.b[jstar]))
    return HallucinationReport(delta, bound, actual, jstar, degenerate)


def affine_reparam(net: HJNetwork, A, c) -> HJNetwork:
    """Network computing ``x -> net(A x + c)``: weights W A, biases W c + b."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if A.shape[0] != net.dim or c.shape[0] != net.dim:
        raise ValueError(f"A {A.shape} and c {c.shape} do not match network input dimension {net.dim}")
    return HJNetwork(net.W @ A, net.W @ c + net.b, net.eps, net.t)


def support_from_network(net: HJNetwork, t: float | None = None) -> SupportSet:
    """Invert the isotropic parameterization: y_j = 2t W_j, g_j = -b_j - |y_j|^2/(4t)."""
    t = net.t if t is None else t
    Y = 2.0 * t * net.W
    return SupportSet(Y, -net.b - (Y ** 2).sum(axis=1) / (4.0 * t))


def pde_residual(support: SupportSet, x, t: float, eps: float, h: float) -> float:
    """Central-difference residual of u_t + |grad u|^2 - eps*Lap u.

    Evaluated on the heat-normalized solution ``u + (eps d/2) log(4 pi eps t)``;
    without that time-dependent constant the discrete-measure solution has
    residual exactly ``-eps d/(2t)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = x.shape[0]

    def u(xx, tt):
        return hopf_cole_solution(support, xx, tt, eps) + 0.5 * eps * d * math.log(4 * math.pi * eps * tt)

    ut = (u(x, t + h) - u(x, t - h)) / (2 * h)
    u0 = u(x, t)
    grad2 = 0.0
    lap = 0.0
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        up, um = u(x + e, t), u(x - e, t)
        grad2 += ((up - um) / (2 * h)) ** 2
        lap += (up - 2 * u0 + um) / h ** 2
    return float(ut + grad2 - eps * lap)


# -- activation identities: all three are two-logit LSE facts at eps = 1

def lse2(a, b):
    """LSE_1(a, b) elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m))


def two_logit_gibbs(a, b):
    """Gibbs weights (pi_a, pi_b) of the logits (a, b) at eps = 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = np.maximum(a, b)
    ea, eb = np.exp(a - m), np.exp(b - m)
    s = ea + eb
    return ea / s, eb / s


def softplus_as_lse(x):
    return lse2(x, 0.0)


def sigmoid_as_lse_grad(x):
    """d/dx LSE_1(x, 0) is the Gibbs weight of the first logit."""
    return two_logit_gibbs(x, 0.0)[0]


def tanh_as_signed_gibbs(x):
    pp, pm = two_logit_gibbs(x, -np.asarray(x, dtype=np.float64))
    return pp - pm


# -- gauge fixing of the free time parameter

def gauge_data_scale(cov_trace: float, d: int) -> float:
    """t = tr(Sigma_X)/d."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return float(cov_trace) / d


def gauge_data_scale_from_samples(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("need at least two samples to estimate a covariance")
    return gauge_data_scale(float(np.trace(np.atleast_2d(np.cov(X, rowvar=False)))), X.shape[1])


def gauge_generalization(n: int, d: int) -> float:
    """eps* = N^(-1/d)."""
    if n < 1 or d < 1:
        raise ValueError("need N >= 1 and d >= 1")
    return float(n) ** (-1.0 / d)


def mean_attribution_entropy(support: SupportSet, x_grid, t: float, eps: float) -> float:
    X, _ = _points(x_grid, support.dim)
    H, _ = kernels.entropy_batch(X, support.atoms, support.values, t, eps)
    return float(H.mean())


def gauge_information(support: SupportSet, eps: float, x_grid,
                      bracket=(1e-3, 1e3), iterations: int = 60) -> float:
    """t maximizing mean attribution entropy over ``x_grid``; golden section on log t."""
    X, _ = _points(x_grid, support.dim)
    if X.shape[0] == 0:
        raise ValueError("empty x grid")
    invphi = (math.sqrt(5) - 1) / 2

    def score(s):
        return mean_attribution_entropy(support, X, math.exp(s), eps)

    a, b = math.log(bracket[0]), math.log(bracket[1])
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = score(c), score(d)
    for _ in range(iterations):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = score(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = score(d)
    return math.exp(0.5 * (a + b))


def gauge_fix(mode: str, **inputs) -> float:
    """Dispatch to one of the three gauge choices by name.

    ``data_scale``: ``samples=`` or (``cov_trace=``, ``d=``);
    ``generalization``: ``n=``, ``d=``;
    ``information``: ``support=``, ``eps=``, ``x_grid=``.
    """
    if mode == "data_scale":
        if "samples" in inputs:
            return gauge_data_scale_from_samples(inputs["samples"])
        return gauge_data_scale(inputs["cov_trace"], inputs["d"])
    if mode == "generalization":
        return gauge_generalization(inputs["n"], inputs["d"])
    if mode == "information":
        return gauge_information(inputs["support"], inputs["eps"], inputs["x_grid"],
                                 inputs.get("bracket", (1e-3, 1e3)), inputs.get("iterations", 60))
    raise ValueError(f"unknown gauge mode {mode!r}")
