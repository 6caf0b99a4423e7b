"""Linear system simulation under bounded disturbances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

UNIFORM = "uniform-box"
TRUNC_GAUSS = "truncated-gaussian"
BOUNDARY = "boundary-uniform"
KINDS = (UNIFORM, TRUNC_GAUSS, BOUNDARY)

# independent RNG streams per role
STREAM_DISTURBANCE = 0
STREAM_INPUT = 1
STREAM_PERTURBATION = 2


class DimensionError(ValueError):
    pass


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class SystemModel:
    a_matrix: np.ndarray
    b_matrix: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        n_x = a.shape[0]
        if a.shape != (n_x, n_x) or n_x < 1:
            raise DimensionError(f"A must be square, got {a.shape}")
        b = np.asarray(self.b_matrix, dtype=float)
        if b.size == 0:
            b = np.zeros((n_x, 0))
        b = b.reshape(n_x, -1)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)

    @classmethod
    def autonomous(cls, a_matrix) -> "SystemModel":
        a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
        return cls(a, np.zeros((a.shape[0], 0)))

    @property
    def n_x(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_matrix.shape[1]

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.a_matrix, self.b_matrix])


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded i.i.d. distribution on the box ``[-w_max, w_max]^n``.

    ``sigma_w`` is the standard deviation of the Gaussian before truncation and
    is only used by the truncated-gaussian kind.
    """

    kind: str
    w_max: float
    sigma_w: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not self.w_max >= 0:
            raise ValueError("w_max must be nonnegative")
        if self.kind == TRUNC_GAUSS and not self.sigma_w > 0:
            raise ValueError("sigma_w must be positive")

    def variance_proxy(self) -> float:
        """Sub-Gaussian scale used by default for the least-squares region."""
        if self.kind == TRUNC_GAUSS:
            return min(self.sigma_w, self.w_max)
        if self.kind == UNIFORM:
            return self.w_max / math.sqrt(3.0)
        return self.w_max


def sample_disturbance(dist: DisturbanceModel, rng: np.random.Generator, dim: int,
                       size: int | None = None) -> np.ndarray:
    """Draw one vector (or ``size`` rows of vectors) from ``dist``."""
    shape = (dim,) if size is None else (size, dim)
    w = dist.w_max
    if w == 0:
        return np.zeros(shape)
    if dist.kind == UNIFORM:
        return rng.uniform(-w, w, size=shape)
    if dist.kind == TRUNC_GAUSS:
        # inverse CDF: one uniform per value keeps every draw a prefix of a longer one
        lo = ndtr(-w / dist.sigma_w)
        return dist.sigma_w * ndtri(lo + rng.uniform(size=shape) * (1 - 2 * lo))
    # boundary: pick one of 2*dim facets, other coordinates uniform; one row of dim + 1 uniforms each
    raw = rng.uniform(size=(1 if size is None else size, dim + 1))
    flat = w * (2 * raw[:, :dim] - 1)
    facet = np.minimum((raw[:, dim] * 2 * dim).astype(int), 2 * dim - 1)
    rows = np.arange(flat.shape[0])
    flat[rows, facet % dim] = np.where(facet < dim, w, -w)
    return flat.reshape(shape)


def q_w_eval(dist: DisturbanceModel, eps: float, n_x: int = 1) -> float:
    """Lower bound on the probability that a coordinate lands within ``eps`` of a face."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    w = dist.w_max
    if eps >= 2 * w:
        return 1.0
    if dist.kind == UNIFORM:
        q = eps / (2 * w)
    elif dist.kind == TRUNC_GAUSS:
        s = dist.sigma_w
        q = math.exp(-w * w / (2 * s * s)) * eps / min(math.sqrt(2 * math.pi) * s, 2 * w)
    else:
        q = 1.0 / (2 * n_x)
    return min(1.0, max(0.0, q))


# ---------------------------------------------------------------------------
# input policies


@dataclass
class IidInput:
    """u_t drawn i.i.d. from a bounded distribution descriptor."""

    dist: DisturbanceModel
    n_u: int

    @property
    def u_max(self) -> float:
        return self.dist.w_max

    def __call__(self, t, x, rngs) -> np.ndarray:
        return sample_disturbance(self.dist, rngs[STREAM_INPUT], self.n_u)


@dataclass
class PerturbedFeedback:
    """u_t = K x_t + v_t + eta_t with eta_t uniform on ``[-eta_max, eta_max]``.

    ``nominal`` is either an array indexed by t or a callable ``(t, x) -> v_t``.
    """

    gain: np.ndarray
    eta_max: float = 0.0
    nominal: Callable | np.ndarray | None = None

    def __post_init__(self):
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))

    def __call__(self, t, x, rngs) -> np.ndarray:
        n_u = self.gain.shape[0]
        if self.nominal is None:
            v = np.zeros(n_u)
        elif callable(self.nominal):
            v = np.asarray(self.nominal(t, x), dtype=float).reshape(n_u)
        else:
            v = np.asarray(self.nominal[t], dtype=float).reshape(n_u)
        eta = rngs[STREAM_PERTURBATION].uniform(-self.eta_max, self.eta_max, size=n_u)
        return self.gain @ x + v + eta


def make_rngs(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(3)
    return [np.random.default_rng(c) for c in children]


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    z: np.ndarray        # (T, n_z)
    x_next: np.ndarray   # (T, n_x)
    w: np.ndarray        # (T, n_x)
    n_x: int
    n_u: int
    seed: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1, self.n_x + self.n_u)
        self.x_next = np.asarray(self.x_next, dtype=float).reshape(-1, self.n_x)
        self.w = np.asarray(self.w, dtype=float).reshape(-1, self.n_x)

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u

    @property
    def horizon(self) -> int:
        return self.z.shape[0]

    def __len__(self) -> int:
        return self.horizon

    @property
    def states(self) -> np.ndarray:
        """x_0 .. x_T (valid for closed-loop trajectories)."""
        return np.vstack([self.z[:1, : self.n_x], self.x_next])

    def prefix(self, T: int) -> "Trajectory":
        return Trajectory(self.z[:T], self.x_next[:T], self.w[:T], self.n_x, self.n_u, self.seed)

    def max_state_norm(self) -> float:
        return float(np.linalg.norm(self.z[:, : self.n_x], axis=1).max(initial=0.0))

    def to_csv(self, path) -> None:
        header = (["t"] + [f"z_{i}" for i in range(self.n_z)]
                  + [f"xnext_{i}" for i in range(self.n_x)]
                  + [f"w_{i}" for i in range(self.n_x)])
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed} n_x={self.n_x} n_u={self.n_u}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(self.horizon):
                vals = np.concatenate([self.z[t], self.x_next[t], self.w[t]])
                writer.writerow([t] + [f"{v:.17g}" for v in vals])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            first = fh.readline()
            meta = dict(kv.split("=") for kv in first.lstrip("# ").split())
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
        n_x, n_u = int(meta["n_x"]), int(meta["n_u"])
        n_z = n_x + n_u
        if len(header) != 1 + n_z + 2 * n_x:
            raise DimensionError("CSV header does not match the declared dimensions")
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, 1:1 + n_z], rows[:, 1 + n_z:1 + n_z + n_x], rows[:, 1 + n_z + n_x:],
                   n_x, n_u, int(meta.get("seed", 0)))


def simulate(model: SystemModel, policy, dist: DisturbanceModel, x0=None,
             horizon: int = 1, seed: int = 0) -> Trajectory:
    """Roll out ``x_{t+1} = A x_t + B u_t + w_t`` for ``horizon`` steps.

    ``policy`` is any callable ``(t, x, rngs) -> u`` (or None when ``n_u = 0``).
    Disturbance, input and perturbation draws come from separate streams, so
    swapping the policy leaves the disturbance sequence untouched.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_x, n_u = model.n_x, model.n_u
    x = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (n_x,):
        raise DimensionError(f"x0 has shape {x.shape}, expected ({n_x},)")
    if n_u > 0 and policy is None:
        raise DimensionError("system has inputs but no policy was given")
    rngs = make_rngs(seed)
    W = sample_disturbance(dist, rngs[STREAM_DISTURBANCE], n_x, size=horizon)
    A, B = model.a_matrix, model.b_matrix
    if n_u == 0 or isinstance(policy, IidInput):
        return _simulate_open_loop(model, policy, W, x, rngs, seed)
    Z = np.empty((horizon, n_x + n_u))
    X = np.empty((horizon, n_x))
    for t in range(horizon):
        u = np.asarray(policy(t, x, rngs), dtype=float).reshape(-1)
        if u.shape != (n_u,):
            raise DimensionError(f"policy returned shape {u.shape}, expected ({n_u},)")
        Z[t, :n_x] = x
        Z[t, n_x:] = u
        x = A @ x + B @ u + W[t]
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(t)
        X[t] = x
    return Trajectory(Z, X, W, n_x, n_u, seed)


def _simulate_open_loop(model, policy, W, x0, rngs, seed) -> Trajectory:
    """Inputs do not depend on the state, so draw them up front and run a lean loop."""
    horizon, n_x, n_u = W.shape[0], model.n_x, model.n_u
    if n_u:
        if policy.n_u != n_u:
            raise DimensionError(f"policy draws {policy.n_u} inputs, expected {n_u}")
        U = sample_disturbance(policy.dist, rngs[STREAM_INPUT], n_u, size=horizon)
    else:
        U = np.zeros((horizon, 0))
    drive = U @ model.b_matrix.T + W
    X = np.empty((horizon, n_x))
    if n_x == 1:
        # plain floats are several times faster than 1x1 array products
        a, xs, d = float(model.a_matrix[0, 0]), float(x0[0]), drive[:, 0].tolist()
        out = [0.0] * horizon
        for t in range(horizon):
            xs = a * xs + d[t]
            out[t] = xs
        X[:, 0] = out
    else:
        A, x = model.a_matrix, x0
        for t in range(horizon):
            x = A @ x + drive[t]
            X[t] = x
    bad = ~np.all(np.isfinite(X), axis=1)
    if bad.any():
        raise NonFiniteStateError(int(np.argmax(bad)))
    Z = np.empty((horizon, n_x + n_u))
    Z[0, :n_x] = x0
    Z[1:, :n_x] = X[:-1]
    Z[:, n_x:] = U
    return Trajectory(Z, X, W, n_x, n_u, seed)


def check_pe(traj: Trajectory, m: int) -> np.ndarray:
    """Minimum eigenvalue of ``(1/m) sum z z^T`` on consecutive length-m segments."""
    if m < 1 or m > traj.horizon:
        raise ValueError("need 1 <= m <= horizon")
    k = traj.horizon // m
    Z = traj.z[: k * m].reshape(k, m, traj.n_z)
    grams = np.einsum("kti,ktj->kij", Z, Z) / m
    return np.maximum(np.linalg.eigvalsh(grams)[:, 0], 0.0)


def spectral_normalize(a: np.ndarray, radius: float) -> np.ndarray:
    return a * (radius / np.max(np.abs(np.linalg.eigvals(a))))


def random_stable_matrix(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    return spectral_normalize(rng.normal(size=(n, n)), radius)
