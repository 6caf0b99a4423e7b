import math

import numpy as np
import pytest

from setmem.lse import ay_region, fit_lse, lse_region_diameter, region_from_stats, self_normalized_radius, write_lse_log
from setmem.sim import TRUNC_GAUSS, UNIFORM, DisturbanceModel, IidInput, SystemModel, simulate

MODEL = SystemModel(np.array([[0.5, 0.2], [0.0, 0.7]]), np.array([[1.0], [0.5]]))


def traj(T=200, seed=0, dist=DisturbanceModel(UNIFORM, 0.5)):
    return simulate(MODEL, IidInput(DisturbanceModel(UNIFORM, 1.0), 1), dist, horizon=T, seed=seed)


def test_ridge_matches_numpy():
    tr = traj()
    fit = fit_lse(tr, 0.1, 150)
    Z, X = tr.z[:150], tr.x_next[:150]
    ref = np.linalg.lstsq(np.vstack([Z, math.sqrt(0.1) * np.eye(3)]),
                          np.vstack([X, np.zeros((3, 2))]), rcond=None)[0].T
    assert np.allclose(fit.theta_hat, ref, atol=1e-12)
    assert fit.T == 150
    with pytest.raises(ValueError):
        fit_lse(tr, 0.0)


def test_radius_oracle():
    V = np.array([[4.0, 1.0], [1.0, 3.0]])
    expect = 2.0 * math.sqrt(2 * math.log(10) + math.log(11.0 / 0.25)) + math.sqrt(0.5) * 3.0
    assert self_normalized_radius(V, 0.5, 0.1, 3.0, 2.0) == pytest.approx(expect, rel=1e-12)


def test_diameter_formula_and_box():
    reg = ay_region(traj(), 0.1, 0.1, 2.0, 0.3)
    lam_min = np.linalg.eigvalsh(reg.fit.gram)[0]
    assert lse_region_diameter(reg) == pytest.approx(2 * reg.radius * math.sqrt(2 / lam_min))
    lo, hi = reg.bounding_box()
    # box half-width along each coordinate is the ellipsoid support value
    Vinv = np.linalg.inv(reg.fit.gram)
    assert np.allclose(hi - reg.fit.theta_hat, reg.radius * np.sqrt(np.diag(Vinv)))
    assert reg.contains(reg.fit.theta_hat) and not reg.contains(hi + 1.0)


def test_stats_form_matches_batch():
    tr = traj(100)
    a = ay_region(tr, 0.1, 0.1, 1.0, 0.5)
    b = region_from_stats(tr.z.T @ tr.z, tr.z.T @ tr.x_next, 100, 0.1, 0.1, 1.0, 0.5)
    assert np.allclose(a.fit.theta_hat, b.fit.theta_hat) and a.radius == pytest.approx(b.radius)


def test_coverage_at_least_nominal():
    dist = DisturbanceModel(TRUNC_GAUSS, 1.0, 0.5)
    S = np.linalg.norm(MODEL.theta)
    hits = sum(ay_region(traj(200, s, dist), 0.1, 0.1, S, 0.5).contains(MODEL.theta) for s in range(60))
    assert hits / 60 >= 0.9


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ay_region(traj(10), delta=1.5)


def test_log(tmp_path):
    tr = traj(50)
    write_lse_log(tmp_path / "l.csv", [(T, 0, ay_region(tr, T=T)) for T in (10, 50)], "x")
    rows = (tmp_path / "l.csv").read_text().splitlines()
    assert rows[1] == "T,seed,radius,lambda_min_gram,diameter" and len(rows) == 4
