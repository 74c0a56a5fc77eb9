from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import PointCloud, make_rng


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Per-step noise levels beta_1..beta_T; index t-1 holds step t."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if not (np.all(b > 0) and np.all(b < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        alpha_bars = np.cumprod(alphas)
        # 1 - alpha_bar via its own recurrence, exact at t = 1 and free of cancellation for small t
        sigma2 = np.empty_like(b)
        acc = 0.0
        for i, beta in enumerate(b):
            acc = acc * (1.0 - beta) + beta
            sigma2[i] = acc
        for arr in (alphas, alpha_bars, sigma2):
            arr.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        object.__setattr__(self, "one_minus_alpha_bars", sigma2)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t - 1])

    def one_minus_alpha_bar(self, t: int) -> float:
        return float(self.one_minus_alpha_bars[t - 1])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step t={t} outside [1, {self.T}]")


def make_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.1) -> DiffusionSchedule:
    """Linear beta schedule over T steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return DiffusionSchedule(np.array([beta_start]))
    return DiffusionSchedule(np.linspace(beta_start, beta_end, T))


def forward_diffuse(x0: PointCloud, t: int, sched: DiffusionSchedule, seed: int = 0):
    """Sample x_t ~ q(x_t | x_0) in closed form; returns ``(x_t, eps)``."""
    sched.check_step(t)
    eps = make_rng(seed, "forward", t).standard_normal(x0.points.shape)
    ab = sched.alpha_bar(t)
    xt = math.sqrt(ab) * x0.points + math.sqrt(sched.one_minus_alpha_bar(t)) * eps
    return x0.with_points(xt), eps
