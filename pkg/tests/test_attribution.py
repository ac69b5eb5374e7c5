import math

import numpy as np
import pytest
from scipy.special import logsumexp

from hopfcole import attribution as A
from hopfcole.core import HJNetwork, SupportSet, build_network, hopf_lax, lse_forward
from hopfcole.robustness import input_gradient


def random_support(rng, n, d):
    return SupportSet(rng.uniform(-1, 1, (n, d)), rng.normal(0, 1, n))


def entropy_ref(Y, g, x, t, eps):
    a = -(g + np.sum((np.atleast_2d(x) - Y) ** 2, axis=1) / (4 * t)) / eps
    lp = a - logsumexp(a)
    return -float(np.sum(np.exp(lp) * lp))


def fd5(f, h):
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)


# -- Gibbs weights and the simplex

def test_gibbs_examples():
    pair = SupportSet([[-1.0], [1.0]], [0.3, 0.3])
    assert np.array_equal(A.gibbs_weights(pair, [0.0], 0.5, 0.2).pi, [0.5, 0.5])
    assert A.gibbs_weights(SupportSet([[0.4]], [1.0]), [3.0], 1.0, 0.1).pi.tolist() == [1.0]
    rng = np.random.default_rng(0)
    sup = random_support(rng, 6, 2)
    x = rng.uniform(-1, 1, 2)
    F = sup.values + np.sum((x - sup.atoms) ** 2, axis=1) / 4.0
    srt = np.sort(F)
    eps = (srt[1] - srt[0]) / 50.0
    pi = A.gibbs_weights(sup, x, 1.0, eps).pi
    j = hopf_lax(sup, x, 1.0)[1]
    assert abs(pi[j] - 1.0) <= 1e-10 and np.max(np.delete(pi, j)) <= 1e-10


def test_simplex_and_entropy_bounds():
    rng = np.random.default_rng(1)
    for _ in range(300):
        sup = random_support(rng, int(rng.integers(1, 12)), int(rng.integers(1, 4)))
        x = rng.uniform(-2, 2, sup.dim)
        eps = float(10 ** rng.uniform(-3, 1))
        pi = A.gibbs_weights(sup, x, 0.5, eps).pi
        assert np.all(pi >= 0) and abs(pi.sum() - 1.0) <= 1e-12
        H, _ = A.attribution_entropy(sup, x, 0.5, eps)
        assert 0.0 <= H <= math.log(sup.size)
        f = A.soft_prediction(A.gibbs_weights(sup, x, 0.5, eps), sup)
        assert sup.values.min() <= f <= sup.values.max()


def test_soft_prediction_examples():
    sup = SupportSet([[-1.0], [1.0]], [0.0, 2.0])
    assert A.soft_prediction(A.GibbsWeights(np.array([0.5, 0.5]), np.zeros(1), 1.0), sup) == 1.0
    w = A.GibbsWeights(np.array([0.0, 1.0]), np.zeros(1), 1.0)
    assert A.soft_prediction(w, sup) == 2.0
    with pytest.raises(ValueError):
        A.soft_prediction(A.GibbsWeights(np.ones(3) / 3, np.zeros(1), 1.0), sup)


def test_gradient_consistency_with_lse_forward():
    rng = np.random.default_rng(2)
    for _ in range(50):
        sup = random_support(rng, 5, 3)
        net = build_network(sup, 0.7, 0.3)
        x = rng.uniform(-1, 1, 3)
        pi = A.gibbs_weights(sup, x, 0.7, 0.3).pi
        g = pi @ net.W
        fd = np.array([fd5(lambda h: lse_forward(net, x + h * e), 1e-3) for e in np.eye(3)])
        assert np.max(np.abs(g - fd)) <= 1e-10
        assert np.max(np.abs(g - input_gradient(net, x))) <= 1e-14


# -- influence formulas

def test_label_sensitivity_examples():
    assert A.label_sensitivity(SupportSet([[0.3]], [2.0]), [1.0], 1.0, 0.5, 0) == 1.0
    pair = SupportSet([[-1.0], [1.0]], [0.0, 0.0])
    assert A.label_sensitivity(pair, [0.0], 1.0, 0.5, 0) == 0.5
    assert A.label_sensitivity(pair, [0.0], 1.0, 0.5, 1) == 0.5
    with pytest.raises(IndexError):
        A.label_sensitivity(pair, [0.0], 1.0, 0.5, 2)


def test_gradients_vanish_in_trivial_cases():
    one = SupportSet([[0.5, 0.5]], [1.0])
    assert np.array_equal(A.prediction_gradient(one, [0.1, 0.2], 1.0, 0.3), [0.0, 0.0])
    flat = SupportSet(np.random.default_rng(3).normal(size=(5, 2)), np.full(5, 0.7))
    assert np.max(np.abs(A.prediction_gradient(flat, [0.1, 0.2], 1.0, 0.3))) <= 1e-15


def test_entropy_examples():
    ring = SupportSet([[math.cos(a), math.sin(a)] for a in np.arange(6) * math.pi / 3], np.zeros(6))
    H, G = A.attribution_entropy(ring, [0.0, 0.0], 1.0, 0.5)
    assert H == pytest.approx(math.log(6), abs=1e-14) and np.max(np.abs(G)) <= 1e-14
    pair = SupportSet([[-1.0], [1.0]], [0.0, 0.0])
    assert A.attribution_entropy(pair, [-1.0], 0.5, 1e-3)[0] <= 1e-12


def test_influence_formulas_match_fd():
    rng = np.random.default_rng(4)
    worst = [0.0, 0.0, 0.0]
    for _ in range(200):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        sup = random_support(rng, n, d)
        t, eps = float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.05, 1.0))
        x = rng.uniform(-1, 1, d)
        j = int(rng.integers(n))

        def f_g(h):
            g = sup.values.copy()
            g[j] += h
            s = SupportSet(sup.atoms, g)
            return A.soft_prediction(A.gibbs_weights(s, x, t, eps), s)

        ls = A.label_sensitivity(sup, x, t, eps, j)
        worst[0] = max(worst[0], abs(ls - fd5(f_g, 1e-3 * eps)) / max(abs(ls), 1e-3))
        hx = 1e-3 * math.sqrt(t * eps)
        pg = A.prediction_gradient(sup, x, t, eps)
        fd = np.array([fd5(lambda h: A.soft_prediction(A.gibbs_weights(sup, x + h * e, t, eps), sup), hx)
                       for e in np.eye(d)])
        worst[1] = max(worst[1], np.linalg.norm(pg - fd) / max(np.linalg.norm(pg), 1e-3))
        _, gH = A.attribution_entropy(sup, x, t, eps)
        fd = np.array([fd5(lambda h: entropy_ref(sup.atoms, sup.values, x + h * e, t, eps), hx) for e in np.eye(d)])
        worst[2] = max(worst[2], np.linalg.norm(gH - fd) / max(np.linalg.norm(gH), 1e-3))
    assert max(worst) <= 1e-5, worst


# -- NTK and fixed-support Hessian

def test_ntk_examples():
    rng = np.random.default_rng(5)
    sup = random_support(rng, 6, 2)
    x = rng.uniform(-1, 1, (1, 2))
    K, lam = A.ntk_gram(sup, x, 1.0, 0.5)
    pi = A.gibbs_weights(sup, x[0], 1.0, 0.5).pi
    assert K.shape == (1, 1) and K[0, 0] == pytest.approx(0.25 * np.sum(pi ** 2), rel=1e-14) and lam > 0
    xs = np.vstack([x, x, rng.uniform(-1, 1, (2, 2))])
    K, lam = A.ntk_gram(sup, xs, 1.0, 0.5)
    assert lam <= 1e-12 * np.trace(K)
    assert np.min(np.linalg.eigvalsh(K)) <= 1e-12 * np.trace(K)


def test_ntk_positive_when_n_le_N():
    rng = np.random.default_rng(6)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        sup = SupportSet(rng.normal(size=(12, d)), rng.normal(size=12))
        xs = rng.normal(size=(6, d))
        K, lam = A.ntk_gram(sup, xs, 1.0, 0.5)
        assert lam > 0 and A.ntk_certified_positive(sup, xs, 1.0, 0.5)
        assert np.allclose(K, K.T) and np.all(np.linalg.eigvalsh(K) >= -1e-15 * np.trace(K))
    sup = SupportSet(rng.normal(size=(3, 2)), rng.normal(size=3))
    assert A.ntk_gram(sup, rng.normal(size=(4, 2)), 1.0, 0.5)[1] == 0.0


def test_fixed_support_hessian():
    assert A.fixed_support_hessian(SupportSet([[1.0]], [0.0]), [0.0], 1.0, 0.3).tolist() == [[0.0]]
    pair = SupportSet([[-1.0], [1.0]], [0.0, 0.0])
    Hm = A.fixed_support_hessian(pair, [0.0], 1.0, 0.3)
    assert np.allclose(Hm, 0.3 * np.array([[0.25, -0.25], [-0.25, 0.25]]), atol=1e-16, rtol=0)
    rng = np.random.default_rng(7)
    for _ in range(50):
        sup = random_support(rng, 7, 2)
        x, eps = rng.uniform(-1, 1, 2), float(rng.uniform(0.05, 1.0))
        Hm = A.fixed_support_hessian(sup, x, 0.5, eps)
        assert np.array_equal(Hm, Hm.T)
        assert np.linalg.eigvalsh(Hm).min() >= -1e-12
        assert np.linalg.norm(Hm @ np.ones(7)) <= 1e-12
        # Hessian of the layer output in its biases
        net = build_network(sup, 0.5, eps)

        def f_b(db):
            return lse_forward(HJNetwork(net.W, net.b + db, eps, 0.5), x)

        i, j = rng.integers(7, size=2)
        h = 1e-3
        ei, ej = np.eye(7)[i] * h, np.eye(7)[j] * h
        fd = (f_b(ei + ej) - f_b(ei - ej) - f_b(-ei + ej) + f_b(-ei - ej)) / (4 * h * h)
        assert abs(Hm[i, j] / eps ** 2 - fd) <= 1e-6 * max(1.0, abs(fd))


# -- critical points and fold sweeps

def _grid_scan_critical_count(Y, g, t, eps, lo=-2.0, hi=2.0, n=40001):
    """Sign changes of the reference entropy's increments on a dense grid."""
    xs = np.linspace(lo, hi, n)[:, None]
    a = -(g + (xs - Y[:, 0]) ** 2 / (4 * t)) / eps
    lp = a - logsumexp(a, axis=1, keepdims=True)
    H = -np.sum(np.exp(lp) * lp, axis=1)
    dH = np.diff(H)
    keep = np.abs(dH) > 1e-14
    s = np.sign(dH[keep])
    return int(np.sum(s[1:] != s[:-1]))


def test_single_atom_flat_case():
    d = {}
    pts = A.find_critical_points(SupportSet([[0.3, 0.1]], [1.0]), 1.0, 0.5, diagnostics=d)
    assert len(pts) == 1 and pts[0].degenerate and d.get("flat")
    tr = A.bifurcation_sweep(SupportSet([[0.3]], [1.0]), 1.0, np.geomspace(0.01, 10, 10))
    assert np.all(tr.counts == 1) and not tr.folds


def test_symmetric_pair_single_maximum():
    # H depends on x only through one logit difference, so it is unimodal
    pair = SupportSet([[-1.0], [1.0]], [0.0, 0.0])
    for eps in (0.01, 0.1, 1.0):
        pts = A.find_critical_points(pair, 0.5, eps)
        assert len(pts) == 1 and pts[0].morse_type == "maximum" and abs(pts[0].location[0]) <= 1e-8
        assert _grid_scan_critical_count(pair.atoms, pair.values, 0.5, eps) == 1


def test_symmetric_triple_three_to_one():
    sup = SupportSet([[-1.0], [0.0], [1.0]], [0.0, 0.0, 0.0])
    pts = A.find_critical_points(sup, 0.5, 0.1)
    assert [p.morse_type for p in pts] == ["maximum", "minimum", "maximum"]
    assert abs(pts[1].location[0]) <= 1e-8
    E = np.geomspace(0.02, 20, 30)
    tr = A.bifurcation_sweep(sup, 0.5, E)
    assert tr.counts_nonincreasing() and tr.counts[0] == 3 and tr.counts[-1] == 1
    assert len(tr.folds) == 1 and tr.folds[0].count_before == 3 and tr.folds[0].count_after == 1
    lo, hi = tr.folds[0].eps_interval
    assert _grid_scan_critical_count(sup.atoms, sup.values, 0.5, lo * 0.98) == 3
    assert _grid_scan_critical_count(sup.atoms, sup.values, 0.5, hi * 1.02) == 1
    for k in (0, 10, 20):
        assert _grid_scan_critical_count(sup.atoms, sup.values, 0.5, E[k]) == tr.counts[k]


def test_critical_points_have_zero_gradient():
    sup = A.two_cluster_support(1)
    for p in A.find_critical_points(sup, 0.5, 0.2):
        x = p.location
        h = 1e-6
        g = [(entropy_ref(sup.atoms, sup.values, x + e, 0.5, 0.2) - entropy_ref(sup.atoms, sup.values, x - e, 0.5, 0.2))
             / (2 * h) for e in np.eye(2) * h]
        assert np.hypot(*g) <= 1e-6
        assert p.grad_norm <= A.GRAD_TOL


def test_sweep_validation_and_csv():
    sup = SupportSet([[-1.0], [0.0], [1.0]], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        A.bifurcation_sweep(sup, 0.5, np.geomspace(0.1, 1, 5))
    with pytest.raises(ValueError):
        A.bifurcation_sweep(sup, 0.5, np.geomspace(1, 0.1, 12))
    with pytest.raises(ValueError):
        A.find_critical_points(SupportSet(np.eye(3), np.zeros(3)), 0.5, 0.1)
    tr = A.bifurcation_sweep(sup, 0.5, np.geomspace(0.05, 5, 12))
    lines = tr.to_csv().split("\n")
    assert lines[0] == "eps,count,n_min,n_saddle,n_max,min_abs_saddle_eig" and "\r" not in tr.to_csv()
    assert len(lines) == 14 and lines[-1] == ""
    assert tr.points_csv().split("\n")[0] == "eps,x0,type,entropy,min_eig"


@pytest.mark.slow
def test_two_cluster_counts_decrease():
    E = np.geomspace(0.05, 50, 20)
    tr = A.bifurcation_sweep(A.two_cluster_support(0), 0.5, E, continuation_passes=1)
    assert tr.counts_nonincreasing() and tr.counts[-1] == 1 and tr.counts[0] > 1
