import numpy as np
import pytest

from hopfcole.core import SupportSet, hopf_cole_solution
from hopfcole.kernel_net import SENTINEL, kernel_network_eval, legendre_transform_1d

P = np.linspace(-20, 20, 8001)


def quadratic_table(vmax=6.0, n=6001):
    # the discrete max undershoots by up to (dp/2)^2 and interpolation adds
    # dv^2/16; both stay near 1e-7 at these spacings
    p = np.linspace(-4, 4, 8001)
    return legendre_transform_1d(p, p ** 2, np.linspace(-vmax, vmax, n))


def test_quadratic_conjugate():
    tab = quadratic_table()
    err = np.max(np.abs(tab.L - tab.v ** 2 / 4))
    assert err <= 1e-6
    assert tab.convexity_violation() <= 1e-10


def test_abs_conjugate_uses_sentinel():
    v = np.linspace(-2, 2, 401)
    tab = legendre_transform_1d(P, np.abs(P), v)
    inside = np.abs(v) <= 1
    assert np.max(np.abs(tab.L[inside])) <= 1e-12
    assert np.all(tab.L[~inside] == SENTINEL)
    assert tab.domain == (-1.0, 1.0)


def test_affine_conjugate():
    v = np.linspace(-3, 3, 61)
    tab = legendre_transform_1d(P, 1.5 * P, v)
    k = np.argmin(np.abs(v - 1.5))
    assert tab.L[k] == pytest.approx(0.0, abs=1e-12)
    assert np.all(tab.L[np.abs(v - 1.5) > 1e-9] == SENTINEL)


def test_legendre_errors():
    with pytest.raises(ValueError):
        legendre_transform_1d([], [], [0.0])
    with pytest.raises(ValueError, match="convex"):
        legendre_transform_1d(P, -P ** 2, [0.0])
    with pytest.raises(ValueError):
        legendre_transform_1d([1.0, 0.0], [0.0, 0.0], [0.0])


def test_kernel_network_matches_hopf_cole():
    rng = np.random.default_rng(0)
    sup = SupportSet(rng.uniform(-1, 1, (6, 1)), rng.normal(0, 0.5, 6))
    tab = quadratic_table()
    x = np.linspace(-2, 2, 41)
    K = kernel_network_eval(sup, tab, x, 0.5, 0.2)
    u = hopf_cole_solution(sup, x[:, None], 0.5, 0.2)
    assert np.max(np.abs(K - u)) <= 1e-6


def test_kernel_network_small_eps_and_single_atom():
    rng = np.random.default_rng(1)
    sup = SupportSet(rng.uniform(-1, 1, (5, 1)), rng.normal(0, 0.5, 5))
    tab = legendre_transform_1d(P, np.abs(P) ** 1.5, np.linspace(-8, 8, 3201))
    x, t = 0.3, 0.5
    brute = np.min(t * tab((x - sup.atoms[:, 0]) / t) + sup.values)
    devs = [abs(kernel_network_eval(sup, tab, x, t, e) - brute) for e in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(b <= a for a, b in zip(devs, devs[1:])) and devs[-1] <= 1e-3
    one = SupportSet([[0.2]], [0.7])
    assert kernel_network_eval(one, tab, x, t, 0.3) == t * tab((x - 0.2) / t) + 0.7


def test_kernel_network_out_of_table_names_atom():
    sup = SupportSet([[0.0], [5.0]], [0.0, 0.0])
    tab = quadratic_table(vmax=2.0, n=401)
    with pytest.raises(ValueError, match="atom 1"):
        kernel_network_eval(sup, tab, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        kernel_network_eval(SupportSet([[0.0, 0.0]], [0.0]), tab, 0.0, 1.0, 0.1)
