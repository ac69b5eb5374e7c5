"""Residual networks as Euler steps along characteristics, and backprop as
the co-state recurrence integrated in reverse.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import HJNetwork, build_network, lse_forward

# -- built-in drifts with analytic Jacobians


@dataclass(frozen=True, eq=False)
class LinearDrift:
    A: np.ndarray
    name = "linear"

    def __call__(self, x):
        return self.A @ x

    def jacobian(self, x):
        return self.A

    @property
    def dim(self):
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class TanhDrift:
    """F(x) = W tanh(V x)."""

    W: np.ndarray
    V: np.ndarray
    name = "tanh"

    def __call__(self, x):
        return self.W @ np.tanh(self.V @ x)

    def jacobian(self, x):
        s = 1.0 - np.tanh(self.V @ x) ** 2
        return (self.W * s[None, :]) @ self.V

    @property
    def dim(self):
        return self.W.shape[0]


@dataclass(frozen=True, eq=False)
class QuadraticDrift:
    """F(x) = B x + C (x ⊗ x), i.e. F_i = sum_k B_ik x_k + sum_kl C_ikl x_k x_l."""

    B: np.ndarray
    C: np.ndarray
    name = "quadratic"

    def __call__(self, x):
        return self.B @ x + np.einsum("ikl,k,l->i", self.C, x, x)

    def jacobian(self, x):
        return self.B + np.einsum("ikl,l->ik", self.C, x) + np.einsum("ilk,l->ik", self.C, x)

    @property
    def dim(self):
        return self.B.shape[0]


class ZeroDrift:
    name = "zero"

    def __init__(self, d):
        self.d = d

    def __call__(self, x):
        return np.zeros(self.d)

    def jacobian(self, x):
        return np.zeros((self.d, self.d))

    @property
    def dim(self):
        return self.d


def random_drift(family: str, d: int, rng, scale: float = 0.5):
    if family == "linear":
        return LinearDrift(scale * rng.standard_normal((d, d)))
    if family == "tanh":
        return TanhDrift(scale * rng.standard_normal((d, d)), rng.standard_normal((d, d)))
    if family == "quadratic":
        return QuadraticDrift(scale * rng.standard_normal((d, d)),
                              0.5 * scale * rng.standard_normal((d, d, d)) / d)
    if family == "zero":
        return ZeroDrift(d)
    raise ValueError(f"unknown drift family {family!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (L+1, d)
    h: float
    drift: object

    @property
    def L(self) -> int:
        return self.states.shape[0] - 1

    @property
    def T(self) -> float:
        return self.h * self.L


@dataclass(frozen=True, eq=False)
class CostateTrajectory:
    costates: np.ndarray  # (L+1, d)
    terminal_grad: np.ndarray


def resnet_forward(F, x0, h: float, L: int) -> Trajectory:
    """x_{l+1} = x_l + h F(x_l), L times."""
    if not h > 0:
        raise ValueError("step h must be positive")
    if L < 0:
        raise ValueError("layer count must be >= 0")
    x = np.asarray(x0, dtype=np.float64).reshape(-1)
    X = np.empty((L + 1, x.shape[0]))
    X[0] = x
    for l in range(L):
        X[l + 1] = X[l] + h * F(X[l])
        if not np.all(np.isfinite(X[l + 1])):
            raise FloatingPointError(f"non-finite state at layer {l + 1}")
    return Trajectory(X, float(h), F)


def costate_backward(traj: Trajectory, terminal_grad) -> CostateTrajectory:
    """p_{l-1} = p_l + h J_F(x_{l-1})^T p_l, the exact chain rule of the Euler map."""
    pL = np.array(terminal_grad, dtype=np.float64).reshape(-1)
    P = np.empty_like(traj.states)
    P[-1] = pL
    for l in range(traj.L, 0, -1):
        P[l - 1] = P[l] + traj.h * traj.drift.jacobian(traj.states[l - 1]).T @ P[l]
    return CostateTrajectory(P, pL.copy())


def hamiltonian_trace(traj: Trajectory, costates: CostateTrajectory) -> np.ndarray:
    """H_l = p_l . F(x_l)."""
    return np.array([p @ traj.drift(x) for x, p in zip(traj.states, costates.costates)])


def hamiltonian_drift(F, x0, T: float, L: int, terminal_grad_fn=None) -> float:
    """max_l |H_l - H_0| for a run of L steps over total time T (loss 1/2 |x_L|^2 by default)."""
    traj = resnet_forward(F, x0, T / L, L)
    pL = traj.states[-1] if terminal_grad_fn is None else terminal_grad_fn(traj.states[-1])
    H = hamiltonian_trace(traj, costate_backward(traj, pL))
    return float(np.max(np.abs(H - H[0])))


def fd_input_gradient(F, x0, h: float, L: int, loss, step: float = 1e-6) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    g = np.empty_like(x0)
    for k in range(x0.shape[0]):
        e = np.zeros_like(x0)
        e[k] = step
        g[k] = (loss(resnet_forward(F, x0 + e, h, L).states[-1])
                - loss(resnet_forward(F, x0 - e, h, L).states[-1])) / (2 * step)
    return g


def trajectory_csv(traj: Trajectory, costates: CostateTrajectory) -> str:
    d = traj.states.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer"] + [f"x{k}" for k in range(d)] + [f"p{k}" for k in range(d)])
    for l, (x, p) in enumerate(zip(traj.states, costates.costates)):
        w.writerow([l] + [repr(float(v)) for v in x] + [repr(float(v)) for v in p])
    return buf.getvalue()


def feedforward_adjoint(net: HJNetwork, x, loss_grad: float) -> np.ndarray:
    """dL/dg_j = -pi_j(x) loss'(f) for a layer built from a support."""
    if net.support is None:
        raise ValueError("feedforward adjoint needs a network built from a SupportSet")
    z = net.W @ np.asarray(x, dtype=np.float64).reshape(-1) + net.b
    e = np.exp((z - z.max()) / net.eps)
    return -(e / e.sum()) * float(loss_grad)


def fd_value_adjoint(net: HJNetwork, x, loss, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of loss(f) in each g_j, step 1e-5 * eps."""
    sup = net.support
    h = rel_step * net.eps
    out = np.empty(sup.size)
    for j in range(sup.size):
        vals = []
        for s in (h, -h):
            g = sup.values.copy()
            g[j] += s
            vals.append(loss(lse_forward(build_network(sup.with_values(g), net.t, net.eps, net.metric), x)))
        out[j] = (vals[0] - vals[1]) / (2 * h)
    return out


def euler_error(A, x0, T: float, L: int) -> float:
    """|x_L - expm(A T) x0| for the linear family (scipy's scaling-and-squaring expm as oracle)."""
    from scipy.linalg import expm

    traj = resnet_forward(LinearDrift(np.asarray(A, dtype=np.float64)), x0, T / L, L)
    return float(np.linalg.norm(traj.states[-1] - expm(np.asarray(A) * T) @ np.asarray(x0, dtype=np.float64)))


__all__ = [
    "LinearDrift", "TanhDrift", "QuadraticDrift", "ZeroDrift", "random_drift", "Trajectory",
    "CostateTrajectory", "resnet_forward", "costate_backward", "hamiltonian_trace", "hamiltonian_drift",
    "fd_input_gradient", "trajectory_csv", "feedforward_adjoint", "fd_value_adjoint", "euler_error",
]
