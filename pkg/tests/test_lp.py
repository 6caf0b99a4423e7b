import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from setmem import lp


def _bounded_instance(rng, n, m):
    # random halfspaces around the origin plus a box, so the set is bounded and nonempty
    G = rng.normal(size=(m, n))
    h = rng.uniform(0.1, 2.0, size=m)
    eye = np.eye(n)
    return np.vstack([G, eye, -eye]), np.concatenate([h, np.full(2 * n, 3.0)])


def _highs_max(c, G, h):
    res = linprog(-c, A_ub=G, b_ub=h, bounds=[(None, None)] * len(c), method="highs")
    return res


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), m=st.integers(1, 60))
def test_maximize_matches_highs(seed, n, m):
    rng = np.random.default_rng(seed)
    G, h = _bounded_instance(rng, n, m)
    c = rng.normal(size=n)
    ours = lp.maximize(c, G, h)
    ref = _highs_max(c, G, h)
    assert ours.status == lp.OPTIMAL
    assert ours.value == pytest.approx(-ref.fun, rel=1e-7, abs=1e-7)
    # the returned point is feasible and attains the value
    assert np.all(G @ ours.x <= h + 1e-7)
    assert c @ ours.x == pytest.approx(ours.value, rel=1e-7, abs=1e-7)


def test_unbounded_and_infeasible_detection():
    G = np.array([[1.0, 0.0]])
    assert lp.maximize(np.array([0.0, 1.0]), G, np.array([1.0])).status == lp.UNBOUNDED
    G = np.array([[1.0], [-1.0]])
    h = np.array([-1.0, -1.0])          # x <= -1 and x >= 1
    r, _ = lp.chebyshev_ball(G, h)
    assert r < 0  # negative radius: empty set
    assert lp.maximize(np.array([1.0]), G, h).status == lp.INFEASIBLE


def test_empty_constraint_set():
    assert lp.maximize(np.zeros(2), np.zeros((0, 2)), np.zeros(0)).status == lp.OPTIMAL
    assert lp.maximize(np.ones(2), np.zeros((0, 2)), np.zeros(0)).status == lp.UNBOUNDED


def test_chebyshev_ball_of_box():
    G = np.vstack([np.eye(2), -np.eye(2)])
    h = np.array([1.0, 3.0, 1.0, 1.0])  # [-1, 1] x [-1, 3]
    r, c = lp.chebyshev_ball(G, h)
    assert r == pytest.approx(1.0)
    assert c[0] == pytest.approx(0.0, abs=1e-9)
    assert -1 + 1 - 1e-9 <= c[1] <= 3 - 1 + 1e-9


def test_chebyshev_zero_rows():
    G = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    assert lp.chebyshev_ball(G, np.array([-1.0, 1, 1, 1, 1]))[0] == -np.inf
    assert lp.chebyshev_ball(G, np.array([0.0, 1, 1, 1, 1]))[0] == pytest.approx(1.0)


def test_chebyshev_unbounded():
    assert lp.chebyshev_ball(np.array([[1.0, 0.0]]), np.array([1.0]))[0] == np.inf


def test_degenerate_many_duplicates():
    # many copies of the same facets: heavy degeneracy, value must still be exact
    rng = np.random.default_rng(0)
    base = rng.normal(size=(8, 3))
    G = np.vstack([base] * 50 + [np.eye(3), -np.eye(3)])
    h = np.concatenate([np.ones(400), np.full(6, 5.0)])
    for _ in range(5):
        c = rng.normal(size=3)
        assert lp.maximize(c, G, h).value == pytest.approx(-_highs_max(c, G, h).fun, rel=1e-8)
    r, _ = lp.chebyshev_ball(G, h)
    ref = _highs_max(np.r_[0, 0, 0, 1.0], np.hstack([G, np.linalg.norm(G, axis=1)[:, None]]), h)
    assert r == pytest.approx(-ref.fun, rel=1e-8)


@given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
def test_support_function_warm_equals_cold(seed, n):
    rng = np.random.default_rng(seed)
    G, h = _bounded_instance(rng, n, 40)
    sf = lp.SupportFunction(G, h)
    for _ in range(15):
        u = rng.normal(size=n)
        assert sf(u) == pytest.approx(lp.maximize(u, G, h).value, rel=1e-8, abs=1e-8)
    assert sf.calls == 15


def test_support_function_unbounded_direction():
    sf = lp.SupportFunction(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, 1.0]))
    assert sf(np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert sf(np.array([0.0, 1.0])) == np.inf
    assert sf(np.array([-1.0, 0.0])) == pytest.approx(1.0)


def test_long_warm_sweep_stays_accurate():
    # crosses the refactorization threshold
    rng = np.random.default_rng(3)
    G, h = _bounded_instance(rng, 4, 300)
    sf = lp.SupportFunction(G, h)
    for u in rng.normal(size=(600, 4)):
        v = sf(u)
    assert v == pytest.approx(lp.maximize(u, G, h).value, rel=1e-8)
