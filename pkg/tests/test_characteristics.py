import numpy as np
import pytest

from hopfcole import characteristics as ch
from hopfcole.core import HJNetwork, SupportSet, build_network, lse_forward

FAMILIES = ("linear", "tanh", "quadratic")


def half_sq(x):
    return 0.5 * float(x @ x)


def test_zero_drift_and_empty_trajectory():
    x0 = np.array([0.3, -1.2])
    traj = ch.resnet_forward(ch.ZeroDrift(2), x0, 0.1, 10)
    assert np.all(traj.states == x0) and traj.T == pytest.approx(1.0)
    cs = ch.costate_backward(traj, x0)
    assert np.all(ch.hamiltonian_trace(traj, cs) == 0.0)
    traj = ch.resnet_forward(ch.ZeroDrift(2), x0, 0.1, 0)
    assert traj.L == 0 and np.array_equal(traj.states, x0[None])
    g = np.array([1.0, 2.0])
    assert np.array_equal(ch.costate_backward(traj, g).costates[0], g)


def test_forward_errors():
    F = ch.LinearDrift(np.eye(1) * 1e3)
    with pytest.raises(ValueError):
        ch.resnet_forward(F, [1.0], 0.0, 3)
    with pytest.raises(ValueError):
        ch.resnet_forward(F, [1.0], 0.1, -1)
    with pytest.raises(FloatingPointError, match="layer"):
        with np.errstate(over="ignore", invalid="ignore"):
            ch.resnet_forward(F, [1.0], 1e3, 200)


def test_euler_first_order():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = 0.5 * rng.standard_normal((3, 3))
        x0 = rng.standard_normal(3)
        e1, e2 = ch.euler_error(A, x0, 1.0, 200), ch.euler_error(A, x0, 1.0, 400)
        assert 1.6 <= e1 / e2 <= 2.4


def test_costate_linear_by_hand():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    x0 = rng.standard_normal(3)
    h, L = 0.05, 7
    traj = ch.resnet_forward(ch.LinearDrift(A), x0, h, L)
    xL = traj.states[-1]
    M = np.linalg.matrix_power(np.eye(3) + h * A, L)
    assert np.allclose(xL, M @ x0, rtol=1e-14, atol=1e-14)
    p0 = ch.costate_backward(traj, xL).costates[0]
    assert np.allclose(p0, M.T @ xL, rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("family", FAMILIES)
def test_costate_matches_fd(family):
    rng = np.random.default_rng(FAMILIES.index(family))
    for _ in range(100):
        d = int(rng.integers(1, 5))
        F = ch.random_drift(family, d, rng)
        x0 = rng.standard_normal(d)
        h, L = 0.1, int(rng.integers(1, 12))
        traj = ch.resnet_forward(F, x0, h, L)
        p0 = ch.costate_backward(traj, traj.states[-1]).costates[0]
        fd = ch.fd_input_gradient(F, x0, h, L, half_sq)
        assert np.max(np.abs(p0 - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_hamiltonian_linear_exact():
    # A commutes with (I + hA), so p_l.A x_l is conserved exactly at every h
    rng = np.random.default_rng(3)
    A = 0.5 * rng.standard_normal((3, 3))
    x0 = rng.standard_normal(3)
    for L in (10, 20, 40):
        assert ch.hamiltonian_drift(ch.LinearDrift(A), x0, 1.0, L) <= 1e-13


@pytest.mark.parametrize("family", ["tanh", "quadratic"])
def test_hamiltonian_drift_first_order(family):
    rng = np.random.default_rng(4)
    for _ in range(10):
        F = ch.random_drift(family, 3, rng)
        x0 = rng.standard_normal(3)
        d1, d2 = ch.hamiltonian_drift(F, x0, 1.0, 50), ch.hamiltonian_drift(F, x0, 1.0, 100)
        assert d1 / d2 >= 1.8
    F = ch.random_drift("tanh", 2, rng)
    traj = ch.resnet_forward(F, [0.1, 0.2], 0.5, 1)
    assert ch.hamiltonian_trace(traj, ch.costate_backward(traj, traj.states[-1])).shape == (2,)


def test_trajectory_csv():
    F = ch.random_drift("linear", 2, np.random.default_rng(5))
    traj = ch.resnet_forward(F, [1.0, 0.0], 0.1, 3)
    text = ch.trajectory_csv(traj, ch.costate_backward(traj, traj.states[-1]))
    lines = text.split("\n")
    assert lines[0] == "layer,x0,x1,p0,p1" and len(lines) == 6 and lines[-1] == "" and "\r" not in text


def test_feedforward_adjoint():
    one = build_network(SupportSet([[0.4, 0.1]], [0.3]), 0.5, 0.2)
    assert np.array_equal(ch.feedforward_adjoint(one, [0.0, 0.0], 1.0), [-1.0])
    pair = build_network(SupportSet([[-1.0], [1.0]], [0.5, 0.5]), 0.5, 0.3)
    assert np.allclose(ch.feedforward_adjoint(pair, [0.0], 2.0), [-1.0, -1.0], rtol=1e-15)
    rng = np.random.default_rng(6)
    for _ in range(50):
        d, n = int(rng.integers(1, 4)), int(rng.integers(2, 10))
        net = build_network(SupportSet(rng.normal(size=(n, d)), rng.normal(size=n)), 0.5, float(rng.uniform(0.1, 2)))
        x = rng.normal(size=d)
        loss = lambda f: 0.5 * f * f
        lprime = float(lse_forward(net, x))
        adj = ch.feedforward_adjoint(net, x, lprime)
        fd = ch.fd_value_adjoint(net, x, loss)
        assert np.max(np.abs(adj - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))
        assert adj.sum() == pytest.approx(-lprime, rel=1e-13, abs=1e-15)
    bare = build_network(SupportSet([[0.0]], [0.0]), 0.5, 0.3)
    with pytest.raises(ValueError):
        ch.feedforward_adjoint(HJNetwork(bare.W, bare.b, 0.3, 0.5), [0.0], 1.0)
