"""Set-membership uncertainty sets for ``x_{t+1} = theta z_t + w_t``.

The constraint ``||x_{t+1} - theta z_t||_inf <= w`` splits into two halfspaces
per row of ``theta``, so the membership set is a Cartesian product of row
polytopes in ``R^{n_z}``.  The Frobenius diameter of a product set is the
root-sum-square of the row diameters.
"""

from __future__ import annotations

import csv
import functools
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import HalfspaceIntersection, QhullError
from scipy.stats import qmc, norm

from . import lp
from .sim import Trajectory

CONTAIN_TOL = 1e-9
REDUNDANT_TOL = 1e-9

EXACT = "exact-vertex"
SUPPORT = "support-sampled"
AXIS_BOX = "axis-box"
METHODS = (EXACT, SUPPORT, AXIS_BOX)


class InfeasibleSetError(ValueError):
    """A row polytope is empty (contradictory data or a disturbance bound set too low)."""

    def __init__(self, row: int | None = None):
        msg = "membership set is empty" if row is None else f"row {row} of the membership set is empty"
        super().__init__(msg)
        self.row = row


class UnboundedSetError(ValueError):
    pass


def _scaled_tol(tol, h):
    return tol * np.maximum(1.0, np.abs(h))


class RowPolytope:
    """``{g in R^n : normals @ g <= offsets}`` with amortized appends."""

    def __init__(self, n: int, normals=None, offsets=None):
        self.n = n
        normals = np.zeros((0, n)) if normals is None else np.asarray(normals, dtype=float).reshape(-1, n)
        offsets = np.zeros(0) if offsets is None else np.asarray(offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError("normals and offsets disagree in length")
        if not np.all(np.isfinite(normals)):
            raise ValueError("normals must be finite")
        cap = max(16, normals.shape[0])
        self._G = np.empty((cap, n))
        self._h = np.empty(cap)
        self._m = normals.shape[0]
        self._G[: self._m] = normals
        self._h[: self._m] = offsets
        self._feasible: bool | None = None if self._m else True
        self._contradiction = False

    @property
    def normals(self) -> np.ndarray:
        return self._G[: self._m]

    @property
    def offsets(self) -> np.ndarray:
        return self._h[: self._m]

    def __len__(self) -> int:
        return self._m

    def copy(self) -> "RowPolytope":
        out = RowPolytope(self.n, self.normals.copy(), self.offsets.copy())
        out._feasible = self._feasible
        out._contradiction = self._contradiction
        return out

    def append(self, normals, offsets) -> None:
        normals = np.asarray(normals, dtype=float).reshape(-1, self.n)
        offsets = np.asarray(offsets, dtype=float).reshape(-1)
        k = normals.shape[0]
        if self._m + k > self._G.shape[0]:
            cap = max(2 * self._G.shape[0], self._m + k)
            G, h = np.empty((cap, self.n)), np.empty(cap)
            G[: self._m], h[: self._m] = self.normals, self.offsets
            self._G, self._h = G, h
        self._G[self._m:self._m + k] = normals
        self._h[self._m:self._m + k] = offsets
        self._m += k
        zero = np.all(normals == 0, axis=1)
        if np.any(offsets[zero] < -REDUNDANT_TOL):
            self._contradiction = True
            self._feasible = False
        elif self._feasible is not False:
            self._feasible = None

    @property
    def feasible(self) -> bool:
        if self._feasible is None:
            radius, _ = lp.chebyshev_ball(self.normals, self.offsets)
            self._feasible = bool(radius >= -REDUNDANT_TOL)
        return self._feasible

    def contains(self, g, tol: float = CONTAIN_TOL) -> bool:
        if self._m == 0:
            return True
        slack = self.normals @ np.asarray(g, dtype=float) - self.offsets
        return bool(np.all(slack <= _scaled_tol(tol, self.offsets)))

    def support(self) -> lp.SupportFunction:
        return lp.SupportFunction(self.normals, self.offsets)


class MembershipSet:
    """Product of ``n_x`` row polytopes built with disturbance bound ``w_bound_used``.

    ``prune_every`` (0 disables) removes redundant halfspaces every that many
    absorbed samples.
    """

    def __init__(self, n_x: int, n_z: int, w_bound_used: float, prune_every: int = 0):
        if w_bound_used < 0:
            raise ValueError("w_bound_used must be nonnegative")
        self.n_x, self.n_z = n_x, n_z
        self.w_bound_used = float(w_bound_used)
        self.rows = [RowPolytope(n_z) for _ in range(n_x)]
        self.samples_absorbed = 0
        self.prune_every = prune_every

    @classmethod
    def from_trajectory(cls, traj: Trajectory, w_bound: float, T: int | None = None,
                        prune_every: int = 0) -> "MembershipSet":
        """All samples of ``traj[:T]`` at once (identical to absorbing them one by one)."""
        out = cls(traj.n_x, traj.n_z, w_bound, prune_every=prune_every)
        Z = traj.z[:T]
        X = traj.x_next[:T]
        out.absorb_batch(Z, X)
        return out

    def copy(self) -> "MembershipSet":
        out = MembershipSet(self.n_x, self.n_z, self.w_bound_used, self.prune_every)
        out.rows = [r.copy() for r in self.rows]
        out.samples_absorbed = self.samples_absorbed
        return out

    def add_box(self, lo, hi) -> None:
        """Intersect with entrywise bounds ``lo <= theta <= hi`` (prior knowledge)."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.n_x, self.n_z))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.n_x, self.n_z))
        eye = np.eye(self.n_z)
        for j, row in enumerate(self.rows):
            row.append(np.vstack([eye, -eye]), np.concatenate([hi[j], -lo[j]]))

    def absorb(self, z, x_next) -> None:
        z = np.asarray(z, dtype=float).reshape(-1)
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        if z.shape != (self.n_z,) or x_next.shape != (self.n_x,):
            raise ValueError(f"expected z of length {self.n_z} and x_next of length {self.n_x}")
        w = self.w_bound_used
        normals = np.vstack([z, -z])
        for j, row in enumerate(self.rows):
            row.append(normals, [x_next[j] + w, -x_next[j] + w])
        self.samples_absorbed += 1
        if self.prune_every and self.samples_absorbed % self.prune_every == 0:
            self._prune_in_place()

    def absorb_batch(self, Z, X) -> None:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.n_z)
        X = np.asarray(X, dtype=float).reshape(-1, self.n_x)
        if Z.shape[0] != X.shape[0]:
            raise ValueError("Z and X disagree in length")
        if self.prune_every:
            for z, x in zip(Z, X):
                self.absorb(z, x)
            return
        w = self.w_bound_used
        normals = np.vstack([Z, -Z])
        for j, row in enumerate(self.rows):
            row.append(normals, np.concatenate([X[:, j] + w, -X[:, j] + w]))
        self.samples_absorbed += Z.shape[0]

    def _prune_in_place(self) -> None:
        for j, row in enumerate(self.rows):
            if row.feasible:
                self.rows[j] = prune_row(row)

    @property
    def infeasible_rows(self) -> list[int]:
        return [j for j, r in enumerate(self.rows) if not r.feasible]

    @property
    def feasible(self) -> bool:
        return not self.infeasible_rows

    @property
    def constraint_count(self) -> int:
        return sum(len(r) for r in self.rows)

    def contains(self, theta, tol: float = CONTAIN_TOL) -> bool:
        theta = np.asarray(theta, dtype=float).reshape(self.n_x, self.n_z)
        return all(row.contains(theta[j], tol) for j, row in enumerate(self.rows))

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n_x": self.n_x,
            "n_z": self.n_z,
            "w_bound_used": self.w_bound_used,
            "samples_absorbed": self.samples_absorbed,
            "rows": [{"normals": r.normals.tolist(), "offsets": r.offsets.tolist()} for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MembershipSet":
        out = cls(int(d["n_x"]), int(d["n_z"]), float(d["w_bound_used"]))
        out.samples_absorbed = int(d["samples_absorbed"])
        out.rows = [RowPolytope(out.n_z, np.asarray(r["normals"], dtype=float).reshape(-1, out.n_z),
                                r["offsets"]) for r in d["rows"]]
        if len(out.rows) != out.n_x:
            raise ValueError("row count does not match n_x")
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MembershipSet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def sme_update(mset: MembershipSet, z, x_next) -> MembershipSet:
    """Return a new set with one more sample absorbed."""
    out = mset.copy()
    out.absorb(z, x_next)
    return out


def sme_contains(mset: MembershipSet, theta) -> bool:
    return mset.contains(theta)


# ---------------------------------------------------------------------------
# diameters


@dataclass
class DiameterReport:
    value: float
    method: str
    per_row: list[float]
    is_lower_bound: bool
    is_upper_bound: bool


def direction_set(n: int, budget: int = 128) -> np.ndarray:
    """Deterministic unit directions: axes, pairwise diagonals, then low-discrepancy points.

    At most ``max(budget, n)`` directions; the axes are always present.  The
    rows come ordered as a greedy nearest-neighbour chain, which keeps the
    warm-started support-function sweeps short.
    """
    return _direction_set(n, budget).copy()


@functools.lru_cache(maxsize=64)
def _direction_set(n: int, budget: int) -> np.ndarray:
    dirs = [np.eye(n)]
    count = n
    if n >= 2 and count < budget:
        diag = []
        for i, j in itertools.combinations(range(n), 2):
            for s in (1.0, -1.0):
                d = np.zeros(n)
                d[i], d[j] = 1.0, s
                diag.append(d / math.sqrt(2.0))
        diag = np.array(diag[: budget - count])
        dirs.append(diag)
        count += len(diag)
    extra = budget - count
    if extra > 0 and n == 2:
        # van der Corput angles on the half circle
        angles = np.pi * qmc.Halton(d=1, scramble=False).random(extra + 1)[1:, 0]
        dirs.append(np.column_stack([np.cos(angles), np.sin(angles)]))
    elif extra > 0 and n >= 3:
        pts = qmc.Halton(d=n, scramble=False).random(extra + 1)[1:]
        g = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
        dirs.append(g / np.linalg.norm(g, axis=1, keepdims=True))
    return _chain_order(np.vstack(dirs))


def _chain_order(D: np.ndarray) -> np.ndarray:
    left = np.ones(len(D), dtype=bool)
    seq = [0]
    left[0] = False
    for _ in range(len(D) - 1):
        sim = D @ D[seq[-1]]
        sim[~left] = -np.inf
        k = int(np.argmax(sim))
        seq.append(k)
        left[k] = False
    return D[seq]


def _widths(sf: lp.SupportFunction, D: np.ndarray) -> np.ndarray:
    up = np.array([sf(u) for u in D])
    if np.any(np.isinf(up)):
        return np.full(len(D), np.inf)
    down = np.array([sf(-u) for u in D])
    return up + down


def _axis_widths(row: RowPolytope) -> np.ndarray:
    return _widths(row.support(), np.eye(row.n))


def row_vertices(row: RowPolytope) -> np.ndarray:
    """Vertices of a bounded, nonempty row polytope (low dimension)."""
    n = row.n
    G, h = row.normals, row.offsets
    if n == 1:
        sf = row.support()
        return np.array([[-sf(np.array([-1.0]))], [sf(np.array([1.0]))]])
    radius, center = lp.chebyshev_ball(G, h)
    if radius > 1e-7:
        try:
            hs = HalfspaceIntersection(np.hstack([G, -h[:, None]]), center)
            return hs.intersections
        except QhullError:
            pass
    return _enumerate_vertices(G, h)


def _enumerate_vertices(G, h) -> np.ndarray:
    n = G.shape[1]
    pts = []
    for idx in itertools.combinations(range(G.shape[0]), n):
        M = G[list(idx)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, h[list(idx)])
        if np.all(G @ v <= h + 1e-9 * np.maximum(1, np.abs(h))):
            pts.append(v)
    if not pts:
        raise lp.LPError("vertex enumeration found no vertices")
    return np.array(pts)


def max_pairwise_distance(P: np.ndarray) -> float:
    if len(P) < 2:
        return 0.0
    d = P[:, None, :] - P[None, :, :]
    return float(np.sqrt((d * d).sum(-1).max()))


def row_diameter(row: RowPolytope, method: str = SUPPORT, direction_budget: int = 128,
                 directions: np.ndarray | None = None) -> float:
    if method not in METHODS:
        raise ValueError(f"unknown diameter method {method!r}")
    if not row.feasible:
        raise InfeasibleSetError()
    if len(row) == 0:
        return math.inf
    if method == AXIS_BOX:
        return float(np.sqrt(np.sum(_axis_widths(row) ** 2)))
    if method == SUPPORT:
        D = direction_set(row.n, direction_budget) if directions is None else directions
        return float(_widths(row.support(), D).max())
    if row.n > 3:
        raise ValueError("exact-vertex diameter is limited to n_z <= 3")
    if np.any(np.isinf(_axis_widths(row))):
        return math.inf
    pruned = prune_row(row)
    return max_pairwise_distance(row_vertices(pruned))


def sme_diameter(mset: MembershipSet, method: str = SUPPORT, direction_budget: int = 128,
                 prune: bool | None = None) -> DiameterReport:
    """Frobenius diameter of the membership set, composed from row diameters.

    ``prune=True`` removes every redundant halfspace first, ``prune=None``
    only those slack over the bounding box of rows holding more than
    ``16 * n_z`` constraints, ``prune=False`` nothing.  The value is the same.
    """
    bad = mset.infeasible_rows
    if bad:
        raise InfeasibleSetError(bad[0])
    D = direction_set(mset.n_z, direction_budget) if method == SUPPORT else None
    per_row = []
    for row in mset.rows:
        if prune:
            row = prune_row(row)
        elif prune is None and len(row) > 16 * mset.n_z:
            row = box_filter_row(row)
        per_row.append(row_diameter(row, method, direction_budget, D))
    value = math.sqrt(sum(d * d for d in per_row))
    return DiameterReport(value, method, per_row,
                          is_lower_bound=method in (SUPPORT, EXACT),
                          is_upper_bound=method in (AXIS_BOX, EXACT))


def chebyshev_center(row: RowPolytope) -> np.ndarray:
    if not row.feasible:
        raise InfeasibleSetError()
    if np.any(np.isinf(_axis_widths(row))):
        raise UnboundedSetError("Chebyshev center of an unbounded row")
    radius, center = lp.chebyshev_ball(row.normals, row.offsets)
    return center


def point_estimate(mset: MembershipSet) -> np.ndarray:
    return np.vstack([chebyshev_center(r) for r in mset.rows])


def _box_filter(row: RowPolytope):
    """Drop zero normals and halfspaces slack over the whole bounding box.

    Returns ``(G, h, sf)`` where ``sf`` is the support function of the input
    row; the box step is skipped when the row is unbounded.
    """
    G, h = row.normals, row.offsets
    nz = np.any(G != 0, axis=1)
    G, h = G[nz], h[nz]
    if G.shape[0] <= 1:
        return G, h, None
    sf = lp.SupportFunction(G, h)
    hi = np.array([sf(e) for e in np.eye(row.n)])
    if np.all(np.isfinite(hi)):
        lo = -np.array([sf(-e) for e in np.eye(row.n)])
        center, half = (hi + lo) / 2, (hi - lo) / 2
        box_max = G @ center + np.abs(G) @ half
        keep = ~(box_max < h - _scaled_tol(REDUNDANT_TOL, h))
        G, h = G[keep], h[keep]
    return G, h, sf


def box_filter_row(row: RowPolytope) -> RowPolytope:
    """Cheap partial pruning: same set, fewer halfspaces."""
    G, h, _ = _box_filter(row)
    out = RowPolytope(row.n, G, h)
    out._feasible = row._feasible
    return out


def prune_row(row: RowPolytope) -> RowPolytope:
    """Drop halfspaces that do not change the feasible region.

    Bounded rows first discard every halfspace that is slack over the whole
    bounding box; the rest get an LP test against the remaining halfspaces.
    """
    G, h, _ = _box_filter(row)
    keep = np.ones(G.shape[0], dtype=bool)
    if G.shape[0] > 1:
        for i in range(G.shape[0]):
            keep[i] = False
            others = np.flatnonzero(keep)
            if others.size == 0:
                keep[i] = True
                continue
            res = lp.maximize(G[i], G[others], h[others])
            if res.status != lp.OPTIMAL or res.value > h[i] + _scaled_tol(REDUNDANT_TOL, h[i]):
                keep[i] = True
    out = RowPolytope(row.n, G[keep], h[keep])
    out._feasible = row._feasible
    return out


def prune_redundant(mset: MembershipSet) -> MembershipSet:
    out = mset.copy()
    bad = out.infeasible_rows
    if bad:
        raise InfeasibleSetError(bad[0])
    out.rows = [prune_row(r) for r in out.rows]
    return out


def interval_hull(mset: MembershipSet) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise lower/upper bounds of theta over the set."""
    lo = np.empty((mset.n_x, mset.n_z))
    hi = np.empty((mset.n_x, mset.n_z))
    for j, row in enumerate(mset.rows):
        if not row.feasible:
            raise InfeasibleSetError(j)
        sf = row.support()
        for k, e in enumerate(np.eye(mset.n_z)):
            hi[j, k] = sf(e)
            lo[j, k] = -sf(-e)
        if not (np.all(np.isfinite(hi[j])) and np.all(np.isfinite(lo[j]))):
            raise UnboundedSetError(f"row {j} is unbounded")
    return lo, hi


# ---------------------------------------------------------------------------
# disturbance bound learning


def chebyshev_regression(Z, y) -> tuple[float, np.ndarray]:
    """``min_g max_t |y_t - g.z_t|`` as an LP; returns (value, minimizer)."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    T, n = Z.shape
    ones = np.ones((T, 1))
    G = np.vstack([np.hstack([Z, -ones]), np.hstack([-Z, -ones])])
    h = np.concatenate([y, -y])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = lp.maximize(c, G, h)
    if res.status != lp.OPTIMAL:
        raise lp.LPError(f"Chebyshev regression LP ended {res.status}")
    theta = res.x[:-1]
    value = float(np.max(np.abs(y - Z @ theta)))
    return value, theta


def estimate_wmax_lower(traj: Trajectory, T: int | None = None) -> tuple[float, np.ndarray]:
    """Minimax residual ``min_theta max_t ||x_{t+1} - theta z_t||_inf``.

    Solved row by row; returns ``(w_bar, theta_fit)``.
    """
    Z, X = traj.z[:T], traj.x_next[:T]
    if Z.shape[0] < 1:
        raise ValueError("need at least one sample")
    rows = [chebyshev_regression(Z, X[:, j]) for j in range(traj.n_x)]
    w_bar = max(v for v, _ in rows)
    return w_bar, np.vstack([g for _, g in rows])


def ucb_delta(T: int, n_x: int, n_z: int, max_state_norm: float, beta: float) -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    return beta * n_x ** 1.5 * n_z ** 2 * max_state_norm / T


def ucb_sme_fit(traj: Trajectory, beta: float, T: int | None = None,
                prune_every: int = 0) -> tuple[float, MembershipSet]:
    """Membership set built with the upper confidence bound ``w_bar + delta_T``."""
    sub = traj if T is None else traj.prefix(T)
    w_bar, _ = estimate_wmax_lower(sub)
    norms = max(sub.max_state_norm(), float(np.linalg.norm(sub.x_next, axis=1).max()))
    w_hat = w_bar + ucb_delta(sub.horizon, sub.n_x, sub.n_z, norms, beta)
    return w_hat, MembershipSet.from_trajectory(sub, w_hat, prune_every=prune_every)


# ---------------------------------------------------------------------------
# logs


def write_diameter_log(path, records, n_x: int, header_comment: str | None = None) -> None:
    """CSV with columns T, method, value, per_row_0..; ``records`` are (T, DiameterReport)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["T", "method", "value"] + [f"per_row_{j}" for j in range(n_x)])
        for T, rep in records:
            writer.writerow([T, rep.method, f"{rep.value:.17g}"] + [f"{d:.17g}" for d in rep.per_row])
