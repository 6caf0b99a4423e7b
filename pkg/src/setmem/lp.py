"""Two-phase revised simplex on a dense constraint matrix.

Every LP in the package is an inequality-form problem

    maximize  c . x   subject to  G x <= h,   x free,

which is solved through its dual standard form

    minimize  h . y   subject to  G^T y = c,  y >= 0.

The dual form has only ``len(c)`` equality rows, so the basis stays small
even when ``G`` has thousands of rows.  The primal maximizer is read back from
the simplex multipliers.  Entering columns follow Dantzig's rule and switch to
Bland's rule after a run of degenerate pivots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
DEGENERATE_RUN = 30
REFACTOR_EVERY = 400
PERTURB = 1e-7

OPTIMAL = "optimal"
UNBOUNDED = "unbounded"
INFEASIBLE = "infeasible"


class LPError(RuntimeError):
    """Raised when the simplex fails to terminate or loses accuracy."""


@dataclass
class LPResult:
    status: str
    value: float
    x: np.ndarray | None


class _Tableau:
    """Revised simplex state for ``min cost.y  s.t.  A y = b, y >= 0``.

    Columns ``0..n-1`` are the structural variables, ``n..n+p-1`` the
    artificials, which stay in the problem so that ``B^-1`` can be read off
    them.  Only ``B^-1`` is stored; the tableau row or column a pivot needs is
    formed on demand, which keeps each pivot at one ``p x (n + p)`` product.
    Rows with negative right-hand side are negated and the sign remembered so
    that multipliers can be mapped back.
    """

    def __init__(self, A: np.ndarray, cost: np.ndarray):
        p, n = A.shape
        self.p, self.n = p, n
        self.A = A
        self.cost = np.concatenate([cost, np.zeros(p)])
        self.sign = np.ones(p)
        self.full = np.hstack([A, np.eye(p)])
        self.Binv = np.eye(p)
        self.b = np.zeros(p)
        self.obj = self.cost
        self.rhs = np.zeros(p)
        self.basis = np.arange(n, n + p)
        self.rc = np.zeros(n + p)
        self.ready = False
        self.pivots_since_refactor = 0

    # -- basic operations -------------------------------------------------
    def _column(self, j: int) -> np.ndarray:
        return self.Binv @ self.full[:, j]

    def _row(self, r: int) -> np.ndarray:
        return self.Binv[r] @ self.full

    def _pivot(self, r: int, j: int, col: np.ndarray | None = None, row: np.ndarray | None = None) -> None:
        col = self._column(j) if col is None else col
        row = self._row(r) if row is None else row
        piv = col[r]
        self.rc -= (self.rc[j] / piv) * row
        self.rc[j] = 0.0
        f = col.copy()
        f[r] = 0.0
        self.rhs[r] /= piv
        self.rhs -= f * self.rhs[r]
        brow = self.Binv[r] / piv
        self.Binv -= np.outer(f, brow)
        self.Binv[r] = brow
        self.basis[r] = j
        self.pivots_since_refactor += 1

    def _reset_objective(self, cost: np.ndarray) -> None:
        self.obj = cost
        self.rc = cost - (cost[self.basis] @ self.Binv) @ self.full

    def _entering(self, allowed: np.ndarray, bland: bool) -> int:
        cand = np.flatnonzero(allowed & (self.rc < -OPT_TOL))
        if cand.size == 0:
            return -1
        if bland:
            return int(cand[0])
        return int(cand[np.argmin(self.rc[cand])])

    def _ratio(self, col: np.ndarray) -> int:
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return -1
        ratios = self.rhs[rows] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        # Bland tie-break on the leaving variable
        return int(ties[np.argmin(self.basis[ties])])

    def _primal_loop(self, allowed: np.ndarray, max_iter: int) -> str:
        degenerate = 0
        for _ in range(max_iter):
            if self.pivots_since_refactor > REFACTOR_EVERY:
                self.refactor()
            j = self._entering(allowed, degenerate >= DEGENERATE_RUN)
            if j < 0:
                return OPTIMAL
            col = self._column(j)
            r = self._ratio(col)
            if r < 0:
                return UNBOUNDED
            degenerate = degenerate + 1 if self.rhs[r] <= FEAS_TOL else 0
            self._pivot(r, j, col=col)
        raise LPError("simplex iteration limit reached")

    # -- solves -----------------------------------------------------------
    def solve_cold(self, b: np.ndarray, max_iter: int) -> str:
        """Two-phase solve from the artificial basis.

        The first attempt perturbs the right-hand side so that the start is
        not degenerate (a unit ``b`` otherwise stalls phase 1 in long
        degenerate runs), then removes the perturbation by dual simplex.
        Any non-optimal outcome is rechecked without the perturbation.
        """
        scale = max(1.0, float(np.abs(b).max()))
        pert = PERTURB * scale * (1.0 + (np.arange(self.p) * 0.6180339887498949) % 1.0)
        try:
            if self._two_phase(b, pert, max_iter) == OPTIMAL and self.resolve_rhs(b, max_iter) == OPTIMAL:
                return OPTIMAL
        except LPError:
            pass
        return self._two_phase(b, None, max_iter)

    def _two_phase(self, b: np.ndarray, pert: np.ndarray | None, max_iter: int) -> str:
        p, n = self.p, self.n
        self.sign = np.where(b < 0, -1.0, 1.0)
        self.full = np.hstack([self.A * self.sign[:, None], np.eye(p)])
        self.Binv = np.eye(p)
        self.b = np.abs(b).astype(float)
        if pert is not None:
            self.b += pert
        self.rhs = self.b.copy()
        self.basis = np.arange(n, n + p)
        self.pivots_since_refactor = 0

        phase1 = np.concatenate([np.zeros(n), np.ones(p)])
        self._reset_objective(phase1)
        allowed = np.ones(n + p, dtype=bool)
        self._primal_loop(allowed, max_iter)
        if self.rhs[self.basis >= n].sum() > FEAS_TOL * max(1.0, np.abs(b).max()):
            self.ready = False
            return INFEASIBLE
        self._drive_out_artificials()

        allowed[n:] = False
        self._reset_objective(self.cost)
        status = self._primal_loop(allowed, max_iter)
        self.ready = status == OPTIMAL
        return status

    def _drive_out_artificials(self) -> None:
        n = self.n
        for r in np.flatnonzero(self.basis >= n):
            full_row = self._row(r)
            row = full_row[:n]
            j = np.flatnonzero(np.abs(row) > 1e-9)
            if j.size:
                self._pivot(r, int(j[np.argmax(np.abs(row[j]))]), row=full_row)
        # rows whose artificial stays basic are linearly dependent and stay at zero

    def refactor(self) -> None:
        self.Binv = np.linalg.inv(self.full[:, self.basis])
        self.rhs = self.Binv @ self.b
        self._reset_objective(self.obj)
        self.pivots_since_refactor = 0

    def resolve_rhs(self, b: np.ndarray, max_iter: int) -> str | None:
        """Dual-simplex warm start after a right-hand-side change.

        Returns None when the stored basis cannot be reused.
        """
        if not self.ready:
            return None
        n = self.n
        self.b = self.sign * b
        if self.pivots_since_refactor > REFACTOR_EVERY:
            self.refactor()
        self.rhs = self.Binv @ self.b
        art = self.basis >= n
        scale = max(1.0, float(np.abs(b).max()))
        if art.any() and np.abs(self.rhs[art]).max() > FEAS_TOL * scale:
            # a dependent row would have to carry a nonzero value
            self.ready = False
            return INFEASIBLE
        self._reset_objective(self.cost)
        allowed = np.ones(n + self.p, dtype=bool)
        allowed[n:] = False
        degenerate = 0
        for _ in range(max_iter):
            neg = np.flatnonzero(self.rhs < -FEAS_TOL * scale)
            if neg.size == 0:
                return OPTIMAL
            if degenerate >= DEGENERATE_RUN:
                r = int(neg[np.argmin(self.basis[neg])])
            else:
                r = int(neg[np.argmin(self.rhs[neg])])
            row = self._row(r)
            cand = np.flatnonzero(allowed & (row < -PIVOT_TOL))
            if cand.size == 0:
                self.ready = False
                return INFEASIBLE
            ratios = np.maximum(self.rc[cand], 0.0) / -row[cand]
            best = ratios.min()
            ties = cand[ratios <= best + 1e-12 * max(1.0, best)]
            j = int(ties[0])
            degenerate = degenerate + 1 if best <= OPT_TOL else 0
            self._pivot(r, j, row=row)
        raise LPError("dual simplex iteration limit reached")

    def primal_point(self) -> np.ndarray:
        # multipliers of the equality rows, mapped back through the row signs
        return -self.rc[self.n:] * self.sign

    def objective(self) -> float:
        return float(self.cost[self.basis] @ self.rhs)


def _max_iter(shape) -> int:
    return 50 * (shape[0] + shape[1]) + 1000


def maximize(c, G, h) -> LPResult:
    """Solve ``max c.x  s.t.  G x <= h`` with ``x`` free.

    Status ``unbounded`` is reported whenever the dual form has no feasible
    point; callers that need to separate infeasible from unbounded check
    feasibility first (:func:`chebyshev_ball` does).
    """
    c = np.asarray(c, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float)
    if G.shape[0] == 0:
        if np.all(np.abs(c) <= OPT_TOL):
            return LPResult(OPTIMAL, 0.0, np.zeros(c.size))
        return LPResult(UNBOUNDED, np.inf, None)
    tab = _Tableau(G.T.copy(), h)
    status = tab.solve_cold(c, _max_iter(G.shape))
    if status == INFEASIBLE:
        return LPResult(UNBOUNDED, np.inf, None)
    if status == UNBOUNDED:
        return LPResult(INFEASIBLE, -np.inf, None)
    return LPResult(OPTIMAL, tab.objective(), tab.primal_point())


def chebyshev_ball(G, h) -> tuple[float, np.ndarray | None]:
    """Largest inscribed ball of ``{x : G x <= h}``.

    Returns ``(radius, center)``.  A negative radius means the set is empty;
    ``inf`` means it contains arbitrarily large balls.  Zero rows of ``G`` are
    handled directly: they are dropped when ``h >= 0`` and make the set empty
    otherwise.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float)
    n = G.shape[1]
    norms = np.linalg.norm(G, axis=1)
    zero = norms <= 1e-14
    if np.any(h[zero] < -FEAS_TOL):
        return -np.inf, None
    G, h, norms = G[~zero], h[~zero], norms[~zero]
    if G.shape[0] == 0:
        return np.inf, np.zeros(n)
    Gr = np.hstack([G, norms[:, None]])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = maximize(c, Gr, h)
    if res.status == UNBOUNDED:
        return np.inf, None
    if res.status != OPTIMAL:
        raise LPError("Chebyshev LP failed")
    return float(res.x[-1]), res.x[:-1]


class SupportFunction:
    """Support function ``u -> max u.x`` over ``{x : G x <= h}``.

    Successive calls reuse the previous optimal basis and repair it with dual
    simplex pivots, which is what makes direction sweeps cheap.  The set must
    be nonempty; an empty set gives meaningless (not erroneous) values.
    """

    def __init__(self, G, h):
        self.G = np.atleast_2d(np.asarray(G, dtype=float))
        self.h = np.asarray(h, dtype=float)
        self.n = self.G.shape[1]
        self._tab = _Tableau(self.G.T.copy(), self.h) if self.G.shape[0] else None
        self.calls = 0

    def value_and_point(self, u) -> tuple[float, np.ndarray | None]:
        u = np.asarray(u, dtype=float)
        self.calls += 1
        if self._tab is None:
            if np.all(u == 0):
                return 0.0, np.zeros(self.n)
            return np.inf, None
        it = _max_iter(self.G.shape)
        status = self._tab.resolve_rhs(u, it)
        if status is None:
            status = self._tab.solve_cold(u, it)
        if status == INFEASIBLE:
            return np.inf, None
        if status == UNBOUNDED:
            raise LPError("support LP reports an empty set")
        return self._tab.objective(), self._tab.primal_point()

    def __call__(self, u) -> float:
        return self.value_and_point(u)[0]
