"""Attention as a Gibbs expectation.

Softmax attention weights are the gradient of a log-sum-exp of the logits,
and with L2 logits the partition function is an exact Hopf-Cole sum over the
keys. Both attention paths below accumulate in extended precision
(``np.longdouble``) and round once, so two independent formulas can be
compared at the last-ulp level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SupportSet, build_network, hopf_cole_solution, identity_residual

XP = np.longdouble
LN_FLOOR = 1e-5


@dataclass(frozen=True, eq=False)
class AttentionBatch:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    eps: float | None = None

    def __post_init__(self):
        Q, K, V = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (self.Q, self.K, self.V))
        if Q.shape[1] != K.shape[1]:
            raise ValueError(f"query dim {Q.shape[1]} != key dim {K.shape[1]}")
        if K.shape[0] != V.shape[0]:
            raise ValueError(f"{K.shape[0]} keys but {V.shape[0]} values")
        eps = math.sqrt(Q.shape[1]) if self.eps is None else float(self.eps)
        if not eps > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "eps", eps)


def softmax_attention(batch: AttentionBatch) -> np.ndarray:
    """softmax(Q K^T / eps) V, max-shifted, normalized by the row sum."""
    Q, K, V = batch.Q.astype(XP), batch.K.astype(XP), batch.V.astype(XP)
    Z = (Q @ K.T) / XP(batch.eps)
    Z -= Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    P = E / E.sum(axis=1, keepdims=True)
    return (P @ V).astype(np.float64)


def _lse_eps(z, eps):
    m = z.max(axis=-1, keepdims=True)
    return m + eps * np.log(np.exp((z - m) / eps).sum(axis=-1, keepdims=True))


def lse_grad_attention(batch: AttentionBatch) -> np.ndarray:
    """pi = grad_z LSE_eps(z) = exp((z - LSE_eps(z))/eps) on unscaled logits, then pi V."""
    eps = XP(batch.eps)
    out = np.empty((batch.Q.shape[0], batch.V.shape[1]))
    K, V = batch.K.astype(XP), batch.V.astype(XP)
    for i, q in enumerate(batch.Q.astype(XP)):
        z = np.einsum("kd,d->k", K, q)
        pi = np.exp((z - _lse_eps(z, eps)) / eps)
        out[i] = np.einsum("k,kv->v", pi, V).astype(np.float64)
    return out


def attention_identity_error(batch: AttentionBatch) -> float:
    return float(np.max(np.abs(softmax_attention(batch) - lse_grad_attention(batch))))


def random_batch(rng, n_q: int, n_k: int, d: int, d_v: int, eps: float | None = None) -> AttentionBatch:
    return AttentionBatch(rng.standard_normal((n_q, d)), rng.standard_normal((n_k, d)),
                          rng.standard_normal((n_k, d_v)), eps)


def attention_trials(d: int, trials: int, seed: int, n_q: int = 8, n_k: int = 12, d_v: int = 16,
                     eps: float | None = None) -> float:
    """Max identity error over random batches (defaults match the verification table)."""
    rng = np.random.default_rng(seed)
    return max(attention_identity_error(random_batch(rng, n_q, n_k, d, d_v, eps)) for _ in range(trials))


def l2_attention(Q, K, V, t: float, eps: float):
    """(output, log Z) with logits -|q - k|^2/(4t); log Z_i = -u(q_i)/eps for g = 0 on the keys."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    if t <= 0 or eps <= 0:
        raise ValueError("t and eps must be positive")
    diff = Q[:, None, :] - K[None, :, :]
    a = -np.einsum("qkd,qkd->qk", diff, diff) / (4.0 * t * eps)
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    s = e.sum(axis=1, keepdims=True)
    logZ = (m + np.log(s))[:, 0]
    return (e / s) @ V, logZ


def l2_partition_check(Q, K, t: float, eps: float) -> float:
    """max_i |log Z_i + u(q_i)/eps| against the core Hopf-Cole evaluation."""
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    _, logZ = l2_attention(Q, K, np.zeros((K.shape[0], 1)), t, eps)
    u = hopf_cole_solution(SupportSet(K, np.zeros(K.shape[0])), np.atleast_2d(Q), t, eps)
    return float(np.max(np.abs(logZ + np.atleast_1d(u) / eps)))


def hard_attention(Q, K, V):
    """(V[argmax_j q.k_j], indices); ties go to the lowest index."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    idx = np.argmax(Q @ K.T, axis=1)
    return V[idx], idx


@dataclass(frozen=True)
class SinkReport:
    gap: float
    mass_deficit: float
    bound: float
    sink_index: int

    @property
    def holds(self) -> bool:
        return self.mass_deficit <= self.bound * (1 + 1e-12)


def sink_bound(Q, K, eps: float, i: int) -> SinkReport:
    """Mass outside the top key is at most (n_k - 1) exp(-gap/eps)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    if K.shape[0] < 2:
        raise ValueError("sink bound needs at least two keys")
    z = K @ Q[i]
    js = int(np.argmax(z))
    others = np.delete(z, js)
    gap = float(z[js] - others.max())
    a = (z - z[js]) / eps
    e = np.exp(a)
    # sum the off-sink mass directly; 1 - pi_sink would lose it to rounding
    deficit = float(np.delete(e, js).sum() / e.sum())
    return SinkReport(gap, deficit, (K.shape[0] - 1) * math.exp(-gap / eps), js)


def positional_shift(Q, K, pe, eps: float) -> np.ndarray:
    """phi(i, j) = (q_i.pe_j + pe_i.k_j + pe_i.pe_j)/eps."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    pe = np.atleast_2d(np.asarray(pe, dtype=np.float64))
    pq, pk = pe[: Q.shape[0]], pe[: K.shape[0]]
    return (Q @ pk.T + pq @ K.T + pq @ pk.T) / eps


def positional_shift_check(Q, K, pe, eps: float) -> float:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    pe = np.atleast_2d(np.asarray(pe, dtype=np.float64))
    n = max(Q.shape[0], K.shape[0])
    if pe.shape[0] < n or pe.shape[1] != Q.shape[1]:
        raise ValueError(f"need {n} positional vectors of dimension {Q.shape[1]}")
    full = (Q + pe[: Q.shape[0]]) @ (K + pe[: K.shape[0]]).T / eps
    split = Q @ K.T / eps + positional_shift(Q, K, pe, eps)
    return float(np.max(np.abs(full - split)))


def rope_rotation(position: int, d: int, base: float = 10000.0) -> np.ndarray:
    """Block-diagonal rotary matrix for one position (d even)."""
    if d % 2:
        raise ValueError("rotary embedding needs even d")
    R = np.zeros((d, d))
    for k in range(d // 2):
        th = position * base ** (-2.0 * k / d)
        c, s = math.cos(th), math.sin(th)
        R[2 * k:2 * k + 2, 2 * k:2 * k + 2] = [[c, -s], [s, c]]
    return R


def rotary_norm_deviation(Q, positions) -> float:
    """max |‖R_m q‖ - ‖q‖| over rows q and positions m."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    d = Q.shape[1]
    worst = 0.0
    for m in positions:
        R = rope_rotation(int(m), d)
        worst = max(worst, float(np.max(np.abs(np.linalg.norm(Q @ R.T, axis=1) - np.linalg.norm(Q, axis=1)))))
    return worst


def layer_norm(X, floor: float = LN_FLOOR) -> np.ndarray:
    """Per-row (x - mean)/sqrt(var + floor), unit scale and zero offset."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mu = X.mean(axis=1, keepdims=True)
    var = X.var(axis=1, keepdims=True)
    return (X - mu) / np.sqrt(var + floor)


@dataclass(frozen=True)
class BlockReport:
    attention_error: float
    ffn1_residual: float
    ffn2_residual: float

    @property
    def ffn_residual(self) -> float:
        return max(self.ffn1_residual, self.ffn2_residual)


@dataclass(frozen=True, eq=False)
class BlockParams:
    WQ: np.ndarray
    WK: np.ndarray
    WV: np.ndarray
    W1: np.ndarray  # (N, d)
    b1: np.ndarray
    W2: np.ndarray  # (N, 1): the first LSE layer outputs one scalar per token
    b2: np.ndarray
    eps_attn: float
    eps_ffn: float
    t: float = 1.0

    @classmethod
    def random(cls, rng, d: int, n_hidden: int, eps_ffn: float, t: float = 1.0):
        s = 1.0 / math.sqrt(d)
        return cls(rng.standard_normal((d, d)) * s, rng.standard_normal((d, d)) * s,
                   rng.standard_normal((d, d)) * s, rng.standard_normal((n_hidden, d)) * s,
                   rng.standard_normal(n_hidden), rng.standard_normal((n_hidden, 1)),
                   rng.standard_normal(n_hidden), math.sqrt(d), eps_ffn, t)


def _ffn_residual(W, b, eps, t, X):
    """identity_residual of an arbitrary LSE layer via its induced support."""
    net_W = np.asarray(W, dtype=np.float64)
    Y = 2.0 * t * net_W
    sup = SupportSet(Y, -np.asarray(b) - (Y ** 2).sum(axis=1) / (4.0 * t))
    return float(np.max(identity_residual(sup, X, t, eps))), sup


def transformer_block_check(X, params: BlockParams) -> BlockReport:
    """Pre-LN attention identity and the identity residual of both LSE-FFN layers."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z1 = layer_norm(X)
    batch = AttentionBatch(Z1 @ params.WQ, Z1 @ params.WK, Z1 @ params.WV, params.eps_attn)
    A = softmax_attention(batch)
    err = attention_identity_error(batch)
    Z2 = X + A
    H0 = layer_norm(Z2)
    r1, sup1 = _ffn_residual(params.W1, params.b1, params.eps_ffn, params.t, H0)
    net1 = build_network(sup1, params.t, params.eps_ffn)
    h1 = np.atleast_1d(net1(H0)).reshape(-1, 1)
    r2, _ = _ffn_residual(params.W2, params.b2, params.eps_ffn, params.t, h1)
    return BlockReport(err, r1, r2)
