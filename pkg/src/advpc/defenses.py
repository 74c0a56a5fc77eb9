"""Input-preprocessing defenses: statistical outlier removal and random sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PointCloud, make_rng
from .metrics import sq_dist_matrix


@dataclass(frozen=True)
class SorConfig:
    k: int = 2
    alpha: float = 1.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class SrsConfig:
    drop_n: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.drop_n < 0:
            raise ValueError(f"drop_n must be >= 0, got {self.drop_n}")


def knn_mean_distance(points: np.ndarray, k: int) -> np.ndarray:
    """Mean Euclidean distance from each point to its k nearest other points."""
    d = np.sqrt(sq_dist_matrix(points, points))
    np.fill_diagonal(d, np.inf)
    nearest = np.sort(d, axis=1)[:, :k]
    return nearest.mean(axis=1)


def sor(cloud: PointCloud, cfg: SorConfig = SorConfig()) -> PointCloud:
    """Drop points whose mean kNN distance exceeds mean + alpha * std (single pass)."""
    n = len(cloud)
    if n <= cfg.k:
        raise ValueError(f"SOR needs more than k={cfg.k} points, got {n}")
    if math.isinf(cfg.alpha):
        return cloud
    d = knn_mean_distance(cloud.points, cfg.k)
    threshold = d.mean() + cfg.alpha * d.std()
    keep = d <= threshold
    if not keep.any():
        keep[np.argmin(d)] = True
    return cloud.with_points(cloud.points[keep])


def srs(cloud: PointCloud, cfg: SrsConfig = SrsConfig()) -> PointCloud:
    """Uniformly discard ``cfg.drop_n`` points, keeping the survivors in input order."""
    n = len(cloud)
    if cfg.drop_n >= n:
        raise ValueError(f"cannot drop {cfg.drop_n} of {n} points")
    if cfg.drop_n == 0:
        return cloud
    idx = make_rng(cfg.seed, "srs").choice(n, size=n - cfg.drop_n, replace=False)
    return cloud.with_points(cloud.points[np.sort(idx)])
