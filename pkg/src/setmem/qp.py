"""Small dense convex QP: ``min 0.5 x'Hx + f'x  s.t.  C x <= d`` (primal active set)."""

from __future__ import annotations

import numpy as np

from . import lp


class QPInfeasible(ValueError):
    pass


def solve_qp(H, f, C, d, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Active-set method started from the Chebyshev center of the feasible set.

    ``H`` must be positive definite.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float)
    n = f.size
    if C.shape[0] == 0:
        return np.linalg.solve(H, -f)
    radius, x = lp.chebyshev_ball(C, d)
    if radius < -1e-9:
        raise QPInfeasible("constraints admit no point")
    if x is None:
        x = np.zeros(n)
    work: list[int] = []
    for _ in range(max_iter):
        g = H @ x + f
        k = len(work)
        if k:
            A = C[work]
            K = np.block([[H, A.T], [A, np.zeros((k, k))]])
            sol = np.linalg.lstsq(K, np.concatenate([-g, np.zeros(k)]), rcond=None)[0]
            p, mu = sol[:n], sol[n:]
        else:
            p, mu = np.linalg.solve(H, -g), np.zeros(0)
        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(x)):
            if k == 0 or mu.min() >= -tol:
                return x
            work.pop(int(np.argmin(mu)))
            continue
        Cp = C @ p
        slack = d - C @ x
        alpha, block = 1.0, -1
        for i in np.flatnonzero(Cp > tol):
            if i in work:
                continue
            step = max(slack[i], 0.0) / Cp[i]
            if step < alpha:
                alpha, block = step, int(i)
        x = x + alpha * p
        if block >= 0:
            work.append(block)
    raise RuntimeError("QP active-set iteration limit reached")
