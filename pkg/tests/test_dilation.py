import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homobs import dilation as dl
from homobs.errors import DefinitenessError, DomainError, MonotonicityError


def _random_dilation(seed):
    rng = np.random.default_rng(seed)
    G = np.diag(rng.uniform(0.3, 2.0, 3)) + 0.2 * np.tril(rng.standard_normal((3, 3)), -1)
    # a Lyapunov-type P for which P G + G'P > 0
    from scipy.linalg import solve_continuous_lyapunov
    P = solve_continuous_lyapunov(-G.T, -np.eye(3))
    return dl.make_dilation(G, P / np.trace(P))


def test_make_dilation_examples():
    d = dl.make_dilation(np.eye(2), np.eye(2))
    assert d.alpha == pytest.approx(1) and d.beta == pytest.approx(1)
    d = dl.make_dilation(np.diag([1.0, 2.0]), np.eye(2))
    assert d.alpha == pytest.approx(2) and d.beta == pytest.approx(1)
    with pytest.raises(MonotonicityError):
        dl.make_dilation(np.diag([1.0, -1.0]), np.eye(2))
    with pytest.raises(DefinitenessError):
        dl.make_dilation(np.eye(2), np.diag([1.0, -1.0]))


def test_dilate():
    d = dl.make_dilation(np.diag([1.0, 2.0]), np.eye(2))
    assert np.allclose(dl.dilate(d, 0.0), np.eye(2))
    assert np.allclose(dl.dilate(d, np.log(2)), np.diag([2.0, 4.0]))
    rng = np.random.default_rng(1)
    rd = _random_dilation(3)
    for s, t in rng.uniform(-2, 2, (10, 2)):
        lhs = dl.dilate(rd, s) @ dl.dilate(rd, t)
        assert np.allclose(lhs, dl.dilate(rd, s + t), rtol=1e-10, atol=1e-12)


def test_hom_norm_examples(rng):
    d = dl.make_dilation(np.diag([1.0, 2.0]), np.eye(2))
    assert dl.hom_norm(d, np.array([0.0, 4.0])) == pytest.approx(2.0, rel=1e-12)
    assert dl.hom_norm(d, np.zeros(2)) == 0.0
    x = rng.standard_normal(2)
    assert dl.hom_norm(d, x / np.linalg.norm(x)) == pytest.approx(1.0, rel=1e-12)
    std = dl.make_dilation(np.eye(3), np.eye(3))
    for _ in range(10):
        x = rng.standard_normal(3) * rng.uniform(0.01, 100)
        assert dl.hom_norm(std, x) == pytest.approx(np.linalg.norm(x), rel=1e-10)


def test_hom_norm_residual_and_continuity(rng):
    d = _random_dilation(7)
    for _ in range(50):
        x = rng.standard_normal(3) * 10 ** rng.uniform(-3, 3)
        assert dl.hom_norm_residual(d, x) <= 1e-12
        dx = 1e-8 * np.linalg.norm(x) * rng.standard_normal(3)
        a, b = dl.hom_norm(d, x), dl.hom_norm(d, x + dx)
        assert abs(a - b) <= 1e-6 * a


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.integers(0, 10_000))
def test_hom_norm_scaling(seed, s, xseed):
    d = _random_dilation(seed)
    x = np.random.default_rng(xseed).standard_normal(3)
    lhs = dl.hom_norm(d, dl.dilate(d, s) @ x)
    assert lhs == pytest.approx(np.exp(s) * dl.hom_norm(d, x), rel=1e-8)


def test_gradient(rng):
    d = dl.make_dilation(np.eye(2), np.eye(2))
    assert np.allclose(dl.hom_norm_gradient(d, np.array([3.0, 4.0])), [0.6, 0.8])
    with pytest.raises(DomainError):
        dl.hom_norm_gradient(d, np.zeros(2))
    d = _random_dilation(11)
    for _ in range(10):
        x = rng.standard_normal(3)
        g = dl.hom_norm_gradient(d, x)
        h = 1e-6
        fd = np.array([(dl.hom_norm(d, x + h * e) - dl.hom_norm(d, x - h * e)) / (2 * h)
                       for e in np.eye(3)])
        assert np.allclose(g, fd, atol=1e-6)
        assert g @ (d.generator @ x) == pytest.approx(dl.hom_norm(d, x), abs=1e-8)


def test_sigma_bounds(rng):
    d = dl.make_dilation(np.diag([1.0, 2.0]), np.eye(2))
    assert dl.sigma_bounds(d, 1.0) == (1.0, 1.0)
    # rho > 1: the lower bound uses the smaller exponent
    assert dl.sigma_bounds(d, 4.0) == (4.0, 16.0)
    assert dl.sigma_bounds(d, 0.25) == (0.0625, 0.25)
    rd = _random_dilation(5)
    for _ in range(1000):
        x = rng.standard_normal(3) * 10 ** rng.uniform(-2, 2)
        s1, s2 = dl.sigma_bounds(rd, dl.hom_norm(rd, x))
        r = rd.norm(x)
        assert s1 * (1 - 1e-9) <= r <= s2 * (1 + 1e-9)


def test_make_dilation_accepts_exactly_monotone_pairs(rng):
    from homobs import numerics as nx
    for _ in range(100):
        G = rng.standard_normal((2, 2)) + rng.uniform(-1, 2) * np.eye(2)
        M = rng.standard_normal((2, 2))
        P = M @ M.T + rng.uniform(-0.5, 0.5) * np.eye(2)
        tol = nx.tolerances().pd_margin
        ok = nx.is_pd(P, tol) and nx.is_pd(P @ G + G.T @ P, tol)
        try:
            dl.make_dilation(G, P)
            accepted = True
        except (DefinitenessError, MonotonicityError):
            accepted = False
        assert accepted == ok


def test_check_homogeneity():
    A0 = np.array([[0.0, 1.0], [0.0, 0.0]])
    nu = -1 / 3
    G = np.diag([1.0, 1 + nu])
    assert np.allclose(A0 @ G, (G + nu * np.eye(2)) @ A0)
    rep = dl.check_homogeneity(lambda x: A0 @ x, G, nu, samples=100, seed=0)
    assert rep.max_defect <= 1e-9
    d = dl.make_dilation(np.eye(2), np.eye(2))
    assert dl.check_homogeneity(lambda x: x, d, 0.0, 50, 1).max_defect == 0.0
    assert dl.check_homogeneity(lambda x: x + 1.0, d, 0.0, 50, 1).max_defect > 0.1
