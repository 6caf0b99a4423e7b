import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from setmem import membership as mb
from setmem.membership import (AXIS_BOX, EXACT, SUPPORT, InfeasibleSetError, MembershipSet,
                               RowPolytope, UnboundedSetError)
from setmem.sim import (KINDS, TRUNC_GAUSS, UNIFORM, DisturbanceModel, IidInput, SystemModel,
                        random_stable_matrix, simulate)

TOY = SystemModel(np.array([[0.8]]), np.array([[1.0]]))
TG = DisturbanceModel(TRUNC_GAUSS, 1.0, 0.5)


def toy_traj(T=200, seed=0, dist=TG):
    return simulate(TOY, IidInput(TG, 1), dist, horizon=T, seed=seed)


def interval_oracle(z, x, w):
    """1-d membership interval computed directly from the constraints."""
    lo, hi = -math.inf, math.inf
    for zt, xt in zip(z, x):
        a, b = (xt - w) / zt, (xt + w) / zt
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    return lo, hi


def brute_force_diameter(G, h, tol=1e-9):
    """All pairwise line intersections that satisfy every constraint."""
    pts = []
    for i, j in itertools.combinations(range(len(h)), 2):
        M = G[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        p = np.linalg.solve(M, h[[i, j]])
        if np.all(G @ p <= h + tol * np.maximum(1, np.abs(h))):
            pts.append(p)
    P = np.array(pts)
    return max(np.linalg.norm(a - b) for a in P for b in P)


@given(seed=st.integers(0, 2 ** 31), kind=st.sampled_from(KINDS), n_x=st.integers(1, 3),
       n_u=st.integers(0, 2), T=st.integers(1, 80))
def test_truth_always_contained(seed, kind, n_x, n_u, T):
    rng = np.random.default_rng(seed)
    model = SystemModel(random_stable_matrix(n_x, 0.9, rng), rng.normal(size=(n_x, n_u)))
    dist = DisturbanceModel(kind, 0.5, 0.3)
    pol = IidInput(DisturbanceModel(UNIFORM, 1.0), n_u) if n_u else None
    traj = simulate(model, pol, dist, horizon=T, seed=seed)
    mset = MembershipSet.from_trajectory(traj, dist.w_max)
    assert mset.feasible and mset.contains(model.theta)


def test_scalar_rows_match_interval_oracle():
    sys1 = SystemModel.autonomous([[0.5]])
    traj = simulate(sys1, None, DisturbanceModel(UNIFORM, 1.0), x0=[1.0], horizon=60, seed=4)
    for T in (1, 5, 60):
        lo, hi = interval_oracle(traj.z[:T, 0], traj.x_next[:T, 0], 1.0)
        mset = MembershipSet.from_trajectory(traj, 1.0, T)
        for method in (SUPPORT, EXACT, AXIS_BOX):
            assert mb.sme_diameter(mset, method=method).value == pytest.approx(hi - lo, rel=1e-9, abs=1e-12)
        l2, h2 = mb.interval_hull(mset)
        assert l2[0, 0] == pytest.approx(lo, abs=1e-12) and h2[0, 0] == pytest.approx(hi, abs=1e-12)


def test_nesting_and_monotone_diameter():
    traj = toy_traj(300)
    prev = math.inf
    for T in (4, 8, 16, 64, 300):
        d = mb.sme_diameter(MembershipSet.from_trajectory(traj, 1.0, T), method=EXACT).value
        assert d <= prev + 1e-9
        prev = d
    # later set is inside the earlier set: every vertex of the later set satisfies the earlier constraints
    early = MembershipSet.from_trajectory(traj, 1.0, 20)
    late = MembershipSet.from_trajectory(traj, 1.0, 200)
    for v in mb.row_vertices(late.rows[0]):
        assert early.rows[0].contains(v)


def test_sme_update_does_not_mutate():
    traj = toy_traj(10)
    base = MembershipSet.from_trajectory(traj, 1.0, 5)
    n = base.constraint_count
    new = mb.sme_update(base, traj.z[5], traj.x_next[5])
    assert base.constraint_count == n and new.constraint_count == n + 2
    assert mb.sme_contains(new, TOY.theta)


def test_absorb_equals_batch():
    traj = toy_traj(50)
    a = MembershipSet(1, 2, 1.0)
    for z, x in zip(traj.z, traj.x_next):
        a.absorb(z, x)
    b = MembershipSet.from_trajectory(traj, 1.0)
    def canon(r):
        M = np.column_stack([r.normals, r.offsets])
        return M[np.lexsort(M.T[::-1])]
    # same halfspaces, possibly in a different order
    assert np.array_equal(canon(a.rows[0]), canon(b.rows[0]))


def test_absorb_shape_check():
    with pytest.raises(ValueError):
        MembershipSet(1, 2, 1.0).absorb([1.0], [0.0])


def test_streaming_with_pruning_matches_prefix_replay():
    for seed in range(5):
        traj = toy_traj(400, seed)
        stream = MembershipSet(1, 2, 1.0, prune_every=25)
        for t, (z, x) in enumerate(zip(traj.z, traj.x_next), start=1):
            stream.absorb(z, x)
            if t in (50, 200, 400):
                ref = MembershipSet.from_trajectory(traj, 1.0, t)
                d1 = mb.sme_diameter(stream, method=EXACT).value
                d2 = mb.sme_diameter(ref, method=EXACT).value
                assert d1 == pytest.approx(d2, rel=1e-9, abs=1e-12)
        assert stream.constraint_count < 2 * 400


def test_pruning_preserves_support():
    traj = toy_traj(300)
    mset = MembershipSet.from_trajectory(traj, 1.0)
    pruned = mb.prune_redundant(mset)
    assert pruned.constraint_count < mset.constraint_count
    D = mb.direction_set(2, 64)
    s1, s2 = mset.rows[0].support(), pruned.rows[0].support()
    for u in D:
        assert s1(u) == pytest.approx(s2(u), rel=1e-9, abs=1e-12)
    bf = mb.box_filter_row(mset.rows[0])
    assert len(pruned.rows[0]) <= len(bf) <= len(mset.rows[0])


@given(seed=st.integers(0, 2 ** 31))
def test_method_ordering(seed):
    traj = toy_traj(40, seed % 1000)
    mset = MembershipSet.from_trajectory(traj, 1.0, 10 + seed % 30)
    s = mb.sme_diameter(mset, method=SUPPORT).value
    e = mb.sme_diameter(mset, method=EXACT).value
    b = mb.sme_diameter(mset, method=AXIS_BOX).value
    assert s <= e * (1 + 1e-9) and e <= b * (1 + 1e-9)
    assert s >= 0.99 * e


def test_exact_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(10):
        G = rng.normal(size=(12, 2))
        h = rng.uniform(0.5, 1.5, size=12)
        G = np.vstack([G, np.eye(2), -np.eye(2)])
        h = np.concatenate([h, np.full(4, 2.0)])
        d = mb.row_diameter(RowPolytope(2, G, h), EXACT)
        assert d == pytest.approx(brute_force_diameter(G, h), abs=1e-9)


def test_exact_vertex_three_dims():
    cube = RowPolytope(3, np.vstack([np.eye(3), -np.eye(3)]), np.ones(6))
    assert mb.row_diameter(cube, EXACT) == pytest.approx(2 * math.sqrt(3))
    assert mb.row_diameter(cube, AXIS_BOX) == pytest.approx(2 * math.sqrt(3))
    with pytest.raises(ValueError):
        mb.row_diameter(RowPolytope(4, np.vstack([np.eye(4), -np.eye(4)]), np.ones(8)), EXACT)


def test_degenerate_row_exact():
    # a segment: zero Chebyshev radius
    G = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0]])
    seg = RowPolytope(2, G, np.array([1.0, 1.0, 0.0, 0.0]))
    assert mb.row_diameter(seg, EXACT) == pytest.approx(2.0)


def test_frobenius_composition():
    model = SystemModel.autonomous([[0.5, 0.1], [0.0, 0.3]])
    traj = simulate(model, None, DisturbanceModel(UNIFORM, 1.0), horizon=100, seed=2)
    mset = MembershipSet.from_trajectory(traj, 1.0)
    rep = mb.sme_diameter(mset)
    assert rep.value == pytest.approx(math.sqrt(sum(d * d for d in rep.per_row)))
    assert rep.is_lower_bound and not rep.is_upper_bound


def test_unbounded_until_excited():
    traj = toy_traj(1)
    mset = MembershipSet.from_trajectory(traj, 1.0)
    assert mb.sme_diameter(mset).value == math.inf
    assert mb.sme_diameter(mset, method=EXACT).value == math.inf
    with pytest.raises(UnboundedSetError):
        mb.point_estimate(mset)
    with pytest.raises(UnboundedSetError):
        mb.interval_hull(mset)


def test_infeasible_flagged_per_row():
    traj = toy_traj(200)
    mset = MembershipSet.from_trajectory(traj, 0.2)   # bound far too small
    assert not mset.feasible and mset.infeasible_rows == [0]
    with pytest.raises(InfeasibleSetError):
        mb.sme_diameter(mset)
    with pytest.raises(ValueError):
        MembershipSet(1, 1, -1.0)


def test_point_estimate_inside():
    mset = MembershipSet.from_trajectory(toy_traj(100), 1.0)
    th = mb.point_estimate(mset)
    assert mset.contains(th)
    lo, hi = mb.interval_hull(mset)
    assert np.all(lo <= TOY.theta) and np.all(TOY.theta <= hi)


def test_add_box_prior():
    mset = MembershipSet(1, 2, 1.0)
    mset.add_box([[0.0, 0.0]], [[1.0, 2.0]])
    assert mb.sme_diameter(mset, method=EXACT).value == pytest.approx(math.sqrt(5))


def test_save_load_round_trip(tmp_path):
    mset = MembershipSet.from_trajectory(toy_traj(30), 1.0)
    mset.save(tmp_path / "s.json")
    back = MembershipSet.load(tmp_path / "s.json")
    assert back.w_bound_used == 1.0 and back.samples_absorbed == 30
    assert np.array_equal(back.rows[0].normals, mset.rows[0].normals)
    assert mb.sme_diameter(back).value == mb.sme_diameter(mset).value


def test_direction_set():
    for n, budget in ((2, 128), (3, 10), (5, 128), (20, 128)):
        D = mb.direction_set(n, budget)
        assert len(D) == max(budget, n)
        assert np.allclose(np.linalg.norm(D, axis=1), 1.0)
        # every axis is present
        for e in np.eye(n):
            assert np.any(np.all(np.isclose(D, e), axis=1))
    assert np.array_equal(mb.direction_set(4), mb.direction_set(4))


def test_chebyshev_regression_matches_scipy():
    from scipy.optimize import linprog
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(40, 3))
    y = Z @ np.array([1.0, -2.0, 0.5]) + rng.uniform(-0.3, 0.3, 40)
    val, theta = mb.chebyshev_regression(Z, y)
    A = np.vstack([np.hstack([Z, -np.ones((40, 1))]), np.hstack([-Z, -np.ones((40, 1))])])
    ref = linprog(np.r_[0, 0, 0, 1.0], A_ub=A, b_ub=np.r_[y, -y], bounds=[(None, None)] * 4)
    assert val == pytest.approx(ref.fun, rel=1e-9)
    assert np.max(np.abs(y - Z @ theta)) == pytest.approx(val)


@given(seed=st.integers(0, 2 ** 31))
def test_wbar_is_below_realized_max(seed):
    traj = toy_traj(60, seed % 5000)
    w_bar, _ = mb.estimate_wmax_lower(traj)
    # theta* is a candidate with value max |w_t|
    assert w_bar <= np.abs(traj.w).max() + 1e-12


def test_wbar_nondecreasing_in_T():
    traj = toy_traj(500)
    vals = [mb.estimate_wmax_lower(traj, T)[0] for T in (5, 20, 100, 500)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_ucb():
    assert mb.ucb_delta(100, 4, 6, 10.0, 0.01) == pytest.approx(0.01 * 8 * 36 * 10 / 100)
    with pytest.raises(ValueError):
        mb.ucb_delta(0, 1, 1, 1.0, 1.0)
    traj = toy_traj(300)
    w_hat, mset = mb.ucb_sme_fit(traj, beta=0.5)
    w_bar, _ = mb.estimate_wmax_lower(traj)
    assert w_hat > w_bar and mset.w_bound_used == w_hat


def test_diameter_log(tmp_path):
    traj = toy_traj(50)
    recs = [(T, mb.sme_diameter(MembershipSet.from_trajectory(traj, 1.0, T))) for T in (10, 50)]
    mb.write_diameter_log(tmp_path / "d.csv", recs, 1, "note")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "# note" and lines[1] == "T,method,value,per_row_0" and len(lines) == 4
