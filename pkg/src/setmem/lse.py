"""Regularized least squares with a self-normalized confidence ellipsoid."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .sim import Trajectory


@dataclass
class LseFit:
    theta_hat: np.ndarray   # (n_x, n_z)
    gram: np.ndarray        # lambda I + sum z z^T
    lam: float
    T: int


@dataclass
class ConfidenceRegion:
    """Per-row ellipsoid ``(g - theta_hat_j) V (g - theta_hat_j)^T <= radius^2``."""

    fit: LseFit
    radius: float
    delta: float
    S: float
    L: float

    def contains(self, theta) -> bool:
        diff = np.asarray(theta, dtype=float) - self.fit.theta_hat
        q = np.einsum("ji,ik,jk->j", diff, self.fit.gram, diff)
        return bool(np.all(q <= self.radius ** 2 * (1 + 1e-12)))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Entrywise bounds of the ellipsoid rows."""
        half = self.radius * np.sqrt(np.diag(np.linalg.inv(self.fit.gram)))
        return self.fit.theta_hat - half, self.fit.theta_hat + half


def fit_lse(traj: Trajectory, lam: float, T: int | None = None) -> LseFit:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    Z, X = traj.z[:T], traj.x_next[:T]
    if Z.shape[0] < 1:
        raise ValueError("need at least one sample")
    V = lam * np.eye(traj.n_z) + Z.T @ Z
    theta = np.linalg.solve(V, Z.T @ X).T
    return LseFit(theta, V, lam, Z.shape[0])


def self_normalized_radius(gram: np.ndarray, lam: float, delta: float, S: float, L: float) -> float:
    n = gram.shape[0]
    _, logdet = np.linalg.slogdet(gram)
    log_ratio = logdet - n * math.log(lam)
    return L * math.sqrt(2 * math.log(1 / delta) + log_ratio) + math.sqrt(lam) * S


def ay_region(traj: Trajectory, lam: float = 0.1, delta: float = 0.1, S: float = 1.0,
              L: float = 1.0, T: int | None = None) -> ConfidenceRegion:
    if not (lam > 0 and 0 < delta < 1 and S >= 0 and L > 0):
        raise ValueError("invalid confidence-region parameters")
    fit = fit_lse(traj, lam, T)
    return ConfidenceRegion(fit, self_normalized_radius(fit.gram, lam, delta, S, L), delta, S, L)


def region_from_stats(ZZ, ZX, T: int, lam: float, delta: float, S: float, L: float) -> ConfidenceRegion:
    """Region from accumulated ``sum z z^T`` and ``sum z x_next^T`` (online use)."""
    n = ZZ.shape[0]
    V = lam * np.eye(n) + ZZ
    fit = LseFit(np.linalg.solve(V, ZX).T, V, lam, T)
    return ConfidenceRegion(fit, self_normalized_radius(V, lam, delta, S, L), delta, S, L)


def lse_region_diameter(region: ConfidenceRegion) -> float:
    n_x = region.fit.theta_hat.shape[0]
    lam_min = np.linalg.eigvalsh(region.fit.gram)[0]
    return 2 * region.radius * math.sqrt(n_x) / math.sqrt(lam_min)


def write_lse_log(path, records, header_comment: str | None = None) -> None:
    """CSV with columns T, seed, radius, lambda_min_gram, diameter; records are (T, seed, region)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["T", "seed", "radius", "lambda_min_gram", "diameter"])
        for T, seed, reg in records:
            writer.writerow([T, seed, f"{reg.radius:.17g}",
                             f"{np.linalg.eigvalsh(reg.fit.gram)[0]:.17g}",
                             f"{lse_region_diameter(reg):.17g}"])
