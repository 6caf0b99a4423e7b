"""Scalar tube-based robust adaptive MPC for reference tracking.

Control law ``u = K x + v_0 + eta``.  The nominal model is the midpoint of the
current interval model set ``[a_lo, a_hi] x [b_lo, b_hi]``; the tube radius
``s_k`` bounds the gap between the true and nominal states for every model in
the interval, every disturbance ``|w| <= w_max`` and every exploration term
``|eta| <= eta_max``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lse import region_from_stats
from .membership import MembershipSet, interval_hull
from .qp import QPInfeasible, solve_qp
from .sim import STREAM_DISTURBANCE, STREAM_PERTURBATION, DisturbanceModel, UNIFORM, make_rngs, sample_disturbance

ESTIMATORS = ("sme", "lse", "oracle")


def default_target(t: int) -> float:
    return 8.0 * math.sin(t / 20.0)


@dataclass
class TrackingTask:
    target: Callable[[int], float] = default_target
    Q: float = 1.0
    R: float = 0.1
    x_max: float = 10.0
    u_max: float = 10.0
    length: int = 400

    def __post_init__(self):
        if not (self.Q > 0 and self.R > 0 and self.x_max > 0 and self.u_max > 0):
            raise ValueError("Q, R and the box limits must be positive")


@dataclass
class Interval:
    a_lo: float
    a_hi: float
    b_lo: float
    b_hi: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.a_lo + self.a_hi) / 2, (self.b_lo + self.b_hi) / 2

    @property
    def half_widths(self) -> tuple[float, float]:
        return (self.a_hi - self.a_lo) / 2, (self.b_hi - self.b_lo) / 2

    def contraction(self, K: float) -> float:
        return max(abs(a + b * K) for a in (self.a_lo, self.a_hi) for b in (self.b_lo, self.b_hi))

    def contains(self, a: float, b: float, tol: float = 1e-9) -> bool:
        return (self.a_lo - tol <= a <= self.a_hi + tol) and (self.b_lo - tol <= b <= self.b_hi + tol)

    def intersect(self, other: "Interval") -> "Interval | None":
        out = Interval(max(self.a_lo, other.a_lo), min(self.a_hi, other.a_hi),
                       max(self.b_lo, other.b_lo), min(self.b_hi, other.b_hi))
        if out.a_lo > out.a_hi or out.b_lo > out.b_hi:
            return None
        return out

    @property
    def area(self) -> float:
        return (self.a_hi - self.a_lo) * (self.b_hi - self.b_lo)


@dataclass
class TubeMpcConfig:
    horizon: int = 5
    K: float = -1.0
    eta_max: float = 0.01
    w_max: float = 0.1
    estimator: str = "sme"
    theta0: Interval = field(default_factory=lambda: Interval(1.0, 1.2, 0.9, 1.1))
    a_true: float = 1.2
    b_true: float = 0.9
    lse_lambda: float = 0.1
    lse_delta: float = 0.1
    lse_L: float | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.theta0.contraction(self.K) >= 1:
            raise ValueError("initial model set is not contracted by K (rho >= 1)")


class RampcInfeasible(RuntimeError):
    def __init__(self, step: int | None = None):
        super().__init__("tube MPC problem infeasible" + ("" if step is None else f" at step {step}"))
        self.step = step


def tube_radii(interval: Interval, config: TubeMpcConfig, task: TrackingTask) -> np.ndarray:
    """``s_0 .. s_N`` of the rigid tube for the given interval model set."""
    rho = interval.contraction(config.K)
    ha, hb = interval.half_widths
    b_abs = max(abs(interval.b_lo), abs(interval.b_hi))
    growth = config.w_max + b_abs * config.eta_max + ha * task.x_max + hb * task.u_max
    s = np.zeros(config.horizon + 1)
    for k in range(config.horizon):
        s[k + 1] = rho * s[k] + growth
    return s


def _prediction(phi: float, b: float, N: int):
    """x_bar_k = phi^k x0 + (G v)_k for k = 0..N."""
    pw = phi ** np.arange(N + 1)
    G = np.zeros((N + 1, N))
    for k in range(1, N + 1):
        for i in range(k):
            G[k, i] = phi ** (k - 1 - i) * b
    return pw, G


def rampc_step(state: float, t: int, task: TrackingTask, config: TubeMpcConfig,
               interval: Interval, rng: np.random.Generator | None = None):
    """One receding-horizon step; returns ``(u, diagnostics)``.

    When the full tightened problem is infeasible the constraints beyond the
    first step are dropped, which still keeps the realized state and input
    inside their boxes.
    """
    rho = interval.contraction(config.K)
    if rho >= 1:
        raise ValueError("interval model set is not contracted by K")
    N, K = config.horizon, config.K
    a_c, b_c = interval.center
    phi = a_c + b_c * K
    pw, G = _prediction(phi, b_c, N)
    s = tube_radii(interval, config, task)
    g = np.array([task.target(t + k) for k in range(N + 1)])

    Gx, free = G[1:], pw[1:] * state
    # nominal inputs u_bar_k = K x_bar_k + v_k, k = 0..N-1
    Gu = K * G[:N] + np.eye(N)
    fu = K * pw[:N] * state

    # cost: sum_{k=1..N} Q (x_bar_k - g_k)^2 + sum_{k=0..N-1} R u_bar_k^2
    H = 2 * (task.Q * Gx.T @ Gx + task.R * Gu.T @ Gu)
    f = 2 * (task.Q * Gx.T @ (free - g[1:]) + task.R * Gu.T @ fu)
    x_lim = task.x_max - s[1:]
    u_lim = task.u_max - abs(K) * s[:N] - config.eta_max

    def constraints(upto: int):
        C = np.vstack([Gx[:upto], -Gx[:upto], Gu[:upto], -Gu[:upto]])
        d = np.concatenate([x_lim[:upto] - free[:upto], x_lim[:upto] + free[:upto],
                            u_lim[:upto] - fu[:upto], u_lim[:upto] + fu[:upto]])
        return C, d

    fallback = False
    try:
        v = solve_qp(H, f, *constraints(N))
    except QPInfeasible:
        fallback = True
        try:
            v = solve_qp(H, f, *constraints(1))
        except QPInfeasible:
            raise RampcInfeasible(t) from None
    eta = 0.0 if rng is None or config.eta_max == 0 else float(rng.uniform(-config.eta_max, config.eta_max))
    u = K * state + v[0] + eta
    x_bar = pw * state + G @ v
    return u, {"v": v, "x_bar": x_bar, "tube": s, "rho": rho, "eta": eta, "fallback": fallback}


@dataclass
class EpisodeLog:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    g: np.ndarray
    step_cost: np.ndarray
    cum_cost: np.ndarray
    intervals: np.ndarray      # (T, 4): a_lo, a_hi, b_lo, b_hi
    tube_s1: np.ndarray
    x_next: np.ndarray
    x_bar1: np.ndarray
    fallbacks: int = 0

    def violations(self, task: TrackingTask, tol: float = 1e-9) -> int:
        return int(np.sum(np.abs(self.x_next) > task.x_max + tol) + np.sum(np.abs(self.u) > task.u_max + tol))

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["t", "x", "u", "g", "step_cost", "cum_cost", "a_lo", "a_hi", "b_lo", "b_hi", "tube_s1"])
            for i in range(len(self.t)):
                w.writerow([int(self.t[i])] + [f"{v:.17g}" for v in (
                    self.x[i], self.u[i], self.g[i], self.step_cost[i], self.cum_cost[i],
                    *self.intervals[i], self.tube_s1[i])])


def _lse_interval(ZZ, ZX, T, config: TubeMpcConfig, L: float) -> Interval:
    S = math.hypot(config.a_true, config.b_true)
    reg = region_from_stats(ZZ, ZX, T, config.lse_lambda, config.lse_delta, S, L)
    lo, hi = reg.bounding_box()
    box = Interval(lo[0, 0], hi[0, 0], lo[0, 1], hi[0, 1])
    return box.intersect(config.theta0) or config.theta0


def run_tracking_episode(task: TrackingTask, config: TubeMpcConfig, seed: int) -> EpisodeLog:
    rngs = make_rngs(seed)
    wdist = DisturbanceModel(UNIFORM, config.w_max)
    W = sample_disturbance(wdist, rngs[STREAM_DISTURBANCE], 1, size=task.length)[:, 0]
    a_true, b_true = config.a_true, config.b_true
    L = config.lse_L if config.lse_L is not None else wdist.variance_proxy()

    sme = MembershipSet(1, 2, config.w_max, prune_every=32)
    t0 = config.theta0
    sme.add_box([[t0.a_lo, t0.b_lo]], [[t0.a_hi, t0.b_hi]])
    ZZ, ZX = np.zeros((2, 2)), np.zeros((2, 1))

    n = task.length
    out = {k: np.zeros(n) for k in ("x", "u", "g", "step_cost", "tube_s1", "x_next", "x_bar1")}
    intervals = np.zeros((n, 4))
    fallbacks = 0
    x = 0.0
    for t in range(n):
        if config.estimator == "oracle":
            interval = Interval(a_true, a_true, b_true, b_true)
        elif config.estimator == "sme":
            lo, hi = interval_hull(sme)
            interval = Interval(lo[0, 0], hi[0, 0], lo[0, 1], hi[0, 1]).intersect(t0) or t0
        else:
            interval = t0 if t == 0 else _lse_interval(ZZ, ZX, t, config, L)
        u, diag = rampc_step(x, t, task, config, interval, rngs[STREAM_PERTURBATION])
        fallbacks += diag["fallback"]
        x_next = a_true * x + b_true * u + W[t]
        g = task.target(t)
        out["x"][t], out["u"][t], out["g"][t] = x, u, g
        out["step_cost"][t] = task.Q * (x - g) ** 2 + task.R * u * u
        out["tube_s1"][t] = diag["tube"][1]
        out["x_next"][t] = x_next
        out["x_bar1"][t] = diag["x_bar"][1]
        intervals[t] = (interval.a_lo, interval.a_hi, interval.b_lo, interval.b_hi)
        z = np.array([x, u])
        sme.absorb(z, [x_next])
        ZZ += np.outer(z, z)
        ZX[:, 0] += z * x_next
        x = x_next
    return EpisodeLog(np.arange(n), out["x"], out["u"], out["g"], out["step_cost"],
                      np.cumsum(out["step_cost"]), intervals, out["tube_s1"], out["x_next"],
                      out["x_bar1"], fallbacks)


def final_gap(log: EpisodeLog, opt: EpisodeLog, window: int = 100) -> float:
    """Mean of (cumulative cost - OPT cumulative cost) over the last ``window`` steps."""
    return float(np.mean(log.cum_cost[-window:] - opt.cum_cost[-window:]))
