"""Non-asymptotic failure-probability bounds for set-membership estimation.

The constants grow like ``a2**n_z`` and ``a4**(n_x n_z)``, which overflow
doubles already for small systems, so every bound is evaluated as a logarithm
first.  Reported totals are clipped to ``[0, 1]`` and flagged ``vacuous`` when
the raw value is at least one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .sim import DisturbanceModel, Trajectory, q_w_eval

LOG_544 = math.log(544.0)


@dataclass(frozen=True)
class BmsbParams:
    sigma_z: float
    p_z: float
    b_z: float
    heuristic: bool = False

    def __post_init__(self):
        if not (self.sigma_z > 0 and 0 < self.p_z <= 1 and self.b_z > 0):
            raise ValueError("need sigma_z > 0, 0 < p_z <= 1, b_z > 0")
        if self.sigma_z > self.b_z:
            raise ValueError("sigma_z cannot exceed b_z")


@dataclass(frozen=True)
class BoundConstants:
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    n_x: int
    n_u: int
    n_z: int
    b_z: float
    m: int | None = None


def derive_constants(params: BmsbParams, n_x: int, n_u: int, m: int | None = None) -> BoundConstants:
    s, p, b = params.sigma_z, params.p_z, params.b_z
    a1 = s * p / 4
    a2 = 64 * b * b / (s * s * p * p)
    a3 = p * p / 8
    a4 = 4 * b * math.sqrt(n_x) / a1
    a5 = 4 / a1
    return BoundConstants(a1, a2, a3, a4, a5, n_x, n_u, n_x + n_u, b, m)


def log_covering_bound(n: int, eps: float) -> float:
    """Log of the ball-covering count ``544 n^2.5 log(n/eps) eps^-n``."""
    if n < 1 or not 0 < eps < 0.5:
        raise ValueError("need n >= 1 and 0 < eps < 1/2")
    return LOG_544 + 2.5 * math.log(n) + math.log(math.log(n / eps)) - n * math.log(eps)


def covering_bound(n: int, eps: float) -> float:
    lv = log_covering_bound(n, eps)
    return math.exp(lv) if lv < 709 else math.inf


def _exp(x: float) -> float:
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 709 else math.inf


@dataclass(frozen=True)
class FailureBound:
    total: float
    term1: float
    term2: float
    log_term1: float
    log_term2: float
    vacuous: bool


def _log_term1(T: float, m: int, c: BoundConstants) -> float:
    nz = c.n_z
    return (LOG_544 + math.log(T / m) + 2.5 * math.log(nz) + math.log(math.log(c.a2 * nz))
            + nz * math.log(c.a2) - c.a3 * m)


def _log_term2(delta: float, T: int, m: int, c: BoundConstants, dist: DisturbanceModel) -> float:
    nx, nz = c.n_x, c.n_z
    q = q_w_eval(dist, c.a1 * delta / (4 * math.sqrt(nx)), nx)
    if q >= 1.0:
        return -math.inf
    return (LOG_544 + 2.5 * math.log(nx) + 2.5 * math.log(nz) + math.log(math.log(c.a4 * nx * nz))
            + nx * nz * math.log(c.a4) + math.ceil(T / m) * math.log1p(-q))


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def sme_failure_bound(delta: float, T: int, m: int, consts: BoundConstants,
                      dist: DisturbanceModel) -> FailureBound:
    """Upper bound on ``P(diam(Theta_T) > delta)``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not T > m >= 1:
        raise ValueError("need T > m >= 1")
    l1 = _log_term1(T, m, consts)
    l2 = _log_term2(delta, T, m, consts, dist)
    ltot = _log_add(l1, l2)
    return FailureBound(min(1.0, _exp(ltot)), _exp(l1), _exp(l2), l1, l2, ltot >= 0.0)


def choose_m(T: int, eps: float, consts: BoundConstants) -> int:
    """Smallest segment length that drives the first bound term below ``eps``."""
    if T < 1 or not 0 < eps:
        raise ValueError("need T >= 1 and eps > 0")
    nz, a2 = consts.n_z, consts.a2
    need = (math.log(T / eps) + nz * math.log(a2) + 2.5 * math.log(nz)
            + math.log(math.log(a2 * nz)) + 7) / consts.a3
    return max(1, math.ceil(need))


@dataclass(frozen=True)
class WmaxFailureBound:
    total: float
    t1: float
    t2: float
    t5: float
    vacuous: bool


def wmax_failure_bound(delta: float, T: int, m: int, consts: BoundConstants,
                       dist: DisturbanceModel, b_z: float | None = None) -> WmaxFailureBound:
    """Upper bound on ``P(w_max - w_bar > delta)``."""
    b_z = consts.b_z if b_z is None else b_z
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not T > m >= 1:
        raise ValueError("need T > m >= 1")
    l1 = _log_term1(T, m, consts)
    l2 = _log_term2(delta / (2 * b_z), T, m, consts, dist)
    q5 = q_w_eval(dist, delta / 2, consts.n_x)
    l5 = -math.inf if q5 >= 1.0 else T * math.log1p(-q5)
    ltot = _log_add(_log_add(l1, l2), l5)
    return WmaxFailureBound(min(1.0, _exp(ltot)), _exp(l1), _exp(l2), _exp(l5), ltot >= 0.0)


def conservative_diam_offset(w_hat: float, w_max: float, consts: BoundConstants) -> float:
    """Extra diameter allowed when an over-estimate ``w_hat >= w_max`` is used."""
    return consts.a5 * math.sqrt(consts.n_x) * (w_hat - w_max)


def ucb_diam_bound(delta_T: float, consts: BoundConstants) -> float:
    if delta_T < 0:
        raise ValueError("delta_T must be nonnegative")
    return delta_T * (1 + consts.a5 * math.sqrt(consts.n_x))


def empirical_bmsb(traj: Trajectory, p_z: float = 0.5, n_directions: int = 256) -> BmsbParams:
    """Heuristic BMSB constants read off a trajectory.

    ``b_z`` is the largest observed ``||z_t||``; ``sigma_z`` is the smallest,
    over a fixed direction set, of the ``(1 - p_z)`` quantile of ``|lambda . z_t|``.
    Not a certificate.
    """
    from .membership import direction_set

    Z = traj.z
    b_z = float(np.linalg.norm(Z, axis=1).max())
    D = direction_set(traj.n_z, n_directions)
    proj = np.abs(Z @ D.T)
    sigma = float(np.quantile(proj, 1 - p_z, axis=0).min())
    sigma = min(max(sigma, 1e-12), b_z)
    return BmsbParams(sigma, p_z, b_z, heuristic=True)


def write_bound_table(path, rows) -> None:
    """rows: iterables of (delta, T, m, FailureBound)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "T", "m", "term1", "term2", "total", "vacuous_flag"])
        for delta, T, m, fb in rows:
            writer.writerow([f"{delta:.17g}", T, m, f"{fb.term1:.17g}", f"{fb.term2:.17g}",
                             f"{fb.total:.17g}", int(fb.vacuous)])
