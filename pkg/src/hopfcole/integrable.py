"""Free-soliton KP tau-functions.

``tau = sum_j a_j exp(k_j x1 + k_j^2 x2 + k_j^3 x3)`` solves the Hirota
bilinear KP equation, and at ``x1 = x/(2 t eps), x2 = -1/(4 t eps), x3 = 0`` with
``k = y``, ``a = exp(-g/eps)`` its logarithm is the 1-D Hopf-Cole solution up
to the quadratic term. Amplitudes are stored as logs so that ``g/eps`` of any
size is representable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import SupportSet, hopf_cole_solution


class CancellationWarning(UserWarning):
    """Finite-difference residual is dominated by rounding at this step."""


@dataclass(frozen=True, eq=False)
class TauFunction:
    k: np.ndarray
    log_a: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64).reshape(-1)
        la = np.asarray(self.log_a, dtype=np.float64).reshape(-1)
        if k.size == 0 or k.shape != la.shape:
            raise ValueError("need equal, non-empty wavenumber and amplitude lists")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(la))):
            raise ValueError("wavenumbers and amplitudes must be finite and amplitudes > 0")
        if np.unique(k).size != k.size:
            raise ValueError("wavenumbers must be distinct")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "log_a", la)

    @classmethod
    def from_amplitudes(cls, k, a):
        a = np.asarray(a, dtype=np.float64)
        if np.any(a <= 0):
            raise ValueError("amplitudes must be positive")
        return cls(k, np.log(a))

    @property
    def N(self) -> int:
        return self.k.shape[0]


def exponents(tau: TauFunction, x1, x2, x3) -> np.ndarray:
    """log a_j + k_j x1 + k_j^2 x2 + k_j^3 x3 (shared by every evaluator)."""
    k = tau.k
    return tau.log_a + k * x1 + k * k * x2 + k * k * k * x3


def _lse(a):
    m = a.max()
    return m + math.log(np.exp(a - m).sum())


def tau_eval(tau: TauFunction, x1, x2, x3) -> float:
    """log tau, max-shifted."""
    return _lse(exponents(tau, x1, x2, x3))


def _weights(tau, x1, x2, x3):
    a = exponents(tau, x1, x2, x3)
    e = np.exp(a - a.max())
    return e / e.sum()


def hirota_P(ki, kj):
    """(ki-kj)^4 + 3(ki^2-kj^2)^2 - 4(ki-kj)(ki^3-kj^3), expanded as written."""
    return (ki - kj) ** 4 + 3 * (ki ** 2 - kj ** 2) ** 2 - 4 * (ki - kj) * (ki ** 3 - kj ** 3)


def hirota_residual_bilinear(tau: TauFunction, x1, x2, x3) -> float:
    """sum_ij a_i a_j P(k_i, k_j) e^(xi_i + xi_j) / tau^2 = sum_ij pi_i pi_j P(k_i, k_j)."""
    pi = _weights(tau, x1, x2, x3)
    P = hirota_P(tau.k[:, None], tau.k[None, :])
    return float(pi @ P @ pi)


def _log_ratio(pi, k, d1, d2, d3):
    """log tau(x + delta) - log tau(x) = log sum_j pi_j exp(k d1 + k^2 d2 + k^3 d3)."""
    s = k * d1 + k * k * d2 + k * k * k * d3
    m = s.max()
    return m + math.log(pi @ np.exp(s - m))


def _fd_terms(tau, x1, x2, x3, h):
    """(D1^4, 3 D2^2, -4 D1 D3) of tau.tau / tau^2 by central differences.

    With G(delta) = tau(x+delta) tau(x-delta)/tau(x)^2 the bilinear
    derivative D^alpha tau.tau / tau^2 is d^alpha G at 0, so each term is an
    ordinary stencil applied to G.
    """
    pi = _weights(tau, x1, x2, x3)
    k = tau.k

    def G(d1, d2, d3):
        return math.exp(_log_ratio(pi, k, d1, d2, d3) + _log_ratio(pi, k, -d1, -d2, -d3))

    g0 = 1.0
    d1_4 = (G(2 * h, 0, 0) - 4 * G(h, 0, 0) + 6 * g0 - 4 * G(-h, 0, 0) + G(-2 * h, 0, 0)) / h ** 4
    d2_2 = (G(0, h, 0) - 2 * g0 + G(0, -h, 0)) / h ** 2
    d1d3 = (G(h, 0, h) - G(h, 0, -h) - G(-h, 0, h) + G(-h, 0, -h)) / (4 * h * h)
    return d1_4, 3.0 * d2_2, -4.0 * d1d3


def default_step(tau: TauFunction) -> float:
    km = float(np.max(np.abs(tau.k)))
    return 1e-2 / km if km > 0 else 1e-2


# each G value comes out of a log, an exp and two short sums: allow 4 ulp
G_ULPS = 4.0


def fd_rounding_floor(h: float) -> float:
    """Rounding error of the three stencils on G ~ 1: sum |coeffs| * G error / h^power."""
    u = G_ULPS * np.finfo(float).eps
    return 16 * u / h ** 4 + 3 * 4 * u / h ** 2 + 4 * 4 * u / (4 * h * h)


def hirota_residual_fd(tau: TauFunction, x1, x2, x3, step: float | None = None) -> float:
    """(D1^4 + 3 D2^2 - 4 D1 D3) tau.tau / tau^2 from finite differences of log tau.

    Warns with :class:`CancellationWarning` if the rounding floor exceeds
    half the terms' magnitude (at least the Gibbs moment sum pi k^4).
    """
    h = default_step(tau) if step is None else float(step)
    if not h > 0:
        raise ValueError("step must be positive")
    terms = _fd_terms(tau, x1, x2, x3, h)
    # size of the individual bilinear derivatives (the terms can cancel exactly)
    scale = max(sum(abs(v) for v in terms), float(_weights(tau, x1, x2, x3) @ tau.k ** 4))
    floor = fd_rounding_floor(h)
    if floor > 0.5 * max(scale, np.finfo(float).tiny):
        warnings.warn(f"finite-difference step {h:g} is rounding-dominated (floor {floor:.2e}, "
                      f"term scale {scale:.2e})", CancellationWarning, stacklevel=2)
    return float(sum(terms))


def fd_error_budget(tau: TauFunction, x1, x2, x3, step: float | None = None) -> float:
    """3 x (Richardson truncation estimate + rounding floor) for the residual at ``step``.

    The truncation estimate compares h with 2h rather than h/2: the coarser
    pair carries 16x less rounding, which would otherwise mask the h^2 trend.
    """
    h = default_step(tau) if step is None else float(step)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        r1 = hirota_residual_fd(tau, x1, x2, x3, h)
        r2 = hirota_residual_fd(tau, x1, x2, x3, 2 * h)
    # second-order stencils: R(2h) - R(h) ~ 3 C h^2
    return 3.0 * (abs(r2 - r1) / 3.0 + fd_rounding_floor(h))


def tau_from_support(support: SupportSet, eps: float) -> TauFunction:
    if support.dim != 1:
        raise ValueError("the tau-function correspondence is one-dimensional")
    return TauFunction(support.atoms[:, 0], -support.values / eps)


def tau_log_identity(support: SupportSet, x: float, t: float, eps: float) -> float:
    """|u(x) - (x^2/(4t) - eps log tau(x/(2 t eps), -1/(4 t eps), 0))|."""
    tau = tau_from_support(support, eps)
    u = hopf_cole_solution(support, [x], t, eps)
    return abs(u - (x * x / (4.0 * t) - eps * tau_eval(tau, x / (2.0 * t * eps), -1.0 / (4.0 * t * eps), 0.0)))


def random_tau(rng, n_max: int = 8, k_max: float = 3.0) -> TauFunction:
    n = int(rng.integers(1, n_max + 1))
    return TauFunction(rng.uniform(-k_max, k_max, n), rng.normal(0.0, 1.0, n))
