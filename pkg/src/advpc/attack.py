"""Latent-guided reverse-diffusion attack and gradient-sign baselines.

The diffusion attack never queries a classifier: it walks the clean cloud
through the reverse chain of a denoiser conditioned on the latent of a shape
from another class, and after every reverse step runs a few gradient-descent
iterations on ``lambda1 * DCD + lambda2 * MSE`` towards the clean cloud.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PointCloud, make_rng
from .diffusion import DiffusionSchedule, LatentCode, encode_latent, reverse_step
from .diffusion.models import Denoiser, LatentEncoder
from .metrics import MetricConfig, dcd_and_grad, mse_aligned, mse_aligned_grad
from .nn.classifier import DivergenceError, PointNetLite, input_gradients


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    t_attack: int = 100
    opt_multiplier: int = 1
    lambda1: float = 1.0
    lambda2: float = 1.0
    opt_lr: float = 2.0
    noise_scale: float = 0.05
    # "constant": noise_scale at every step; "linear": noise_scale * t / t_attack
    noise_mode: str = "constant"
    dcd_alpha: float = 40.0
    # raise when even the halved step size fails to lower L_DIS; otherwise skip that step's descent
    strict_descent: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.t_attack < 1:
            raise ValueError("t_attack must be >= 1")
        if self.opt_multiplier < 0:
            raise ValueError("opt_multiplier must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambdas must be non-negative")
        if self.noise_scale < 0 or self.opt_lr < 0:
            raise ValueError("noise_scale and opt_lr must be non-negative")
        if self.noise_mode not in ("constant", "linear"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")


@dataclass(frozen=True)
class BaselineConfig:
    eps: float = 0.32
    steps: int = 10
    step_size: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("eps must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else 2.5 * self.eps / self.steps


def select_guidance_latent(
    encoder: LatentEncoder,
    dataset: Sequence[PointCloud],
    source_label: int,
    mode: str = "deterministic",
    seed: int = 0,
) -> LatentCode:
    """Encode a uniformly chosen cloud whose label differs from ``source_label``."""
    if mode not in ("deterministic", "stochastic"):
        raise ValueError(f"unknown mode {mode!r}")
    candidates = [c for c in dataset if c.label is not None and c.label != source_label]
    if not candidates:
        raise AttackError(f"dataset has no class other than {source_label}")
    rng = make_rng(seed, "guidance")
    chosen = candidates[int(rng.integers(len(candidates)))]
    return encode_latent(encoder, chosen, seed=seed, deterministic=mode == "deterministic")


def ldis_and_grad(x: np.ndarray, clean: np.ndarray, cfg: AttackConfig) -> tuple[float, np.ndarray]:
    """lambda1 * DCD(clean, x) + lambda2 * MSE(clean, x) and its gradient w.r.t. x."""
    value, grad = 0.0, np.zeros_like(x)
    if cfg.lambda1:
        d, g = dcd_and_grad(clean, x, MetricConfig(cfg.dcd_alpha))
        value += cfg.lambda1 * d
        grad += cfg.lambda1 * g
    if cfg.lambda2:
        value += cfg.lambda2 * mse_aligned(clean, x)
        grad += cfg.lambda2 * mse_aligned_grad(clean, x)
    return value, grad


def _ldis(x, clean, cfg):
    return ldis_and_grad(x, clean, cfg)[0]


def _descend(x, clean, cfg, lr, iters):
    for _ in range(iters):
        _, g = ldis_and_grad(x, clean, cfg)
        x = x - lr * g
    return x


def suppress(x: np.ndarray, clean: np.ndarray, cfg: AttackConfig, t: int = 0) -> tuple[np.ndarray, float, float]:
    """Run the inner L_DIS descent; returns (x, loss_before, loss_after).

    If the full step size raises the loss it is halved and retried once. If that
    also fails the step raises under ``strict_descent`` and is otherwise left
    undone, so the loss never increases.
    """
    before = _ldis(x, clean, cfg)
    if cfg.opt_multiplier == 0 or cfg.opt_lr == 0 or (cfg.lambda1 == 0 and cfg.lambda2 == 0):
        return x, before, before
    lr = cfg.opt_lr
    for _ in range(2):
        out = _descend(x, clean, cfg, lr, cfg.opt_multiplier)
        after = _ldis(out, clean, cfg)
        if after <= before:
            return out, before, after
        lr /= 2.0
    if cfg.strict_descent:
        raise AttackError(f"L_DIS increased at step {t} even with halved step size ({before:.6g} -> {after:.6g})")
    return x, before, before


def diffusion_attack(
    clean: PointCloud,
    z_adv: LatentCode,
    den: Denoiser,
    sched: DiffusionSchedule,
    cfg: AttackConfig = AttackConfig(),
    trace: list | None = None,
) -> PointCloud:
    """Craft an adversarial cloud by guided reverse diffusion started at the clean cloud.

    ``trace``, when given, receives ``(t, loss_before, loss_after)`` for every step.
    """
    if cfg.t_attack > sched.T:
        raise AttackError(f"t_attack={cfg.t_attack} exceeds schedule length {sched.T}")
    if z_adv.source_label is not None and clean.label is not None and z_adv.source_label == clean.label:
        raise AttackError(f"guidance latent comes from the cloud's own class {clean.label}")
    ref = np.array(clean.points)
    # reverse steps run in the denoiser's training coordinates, suppression in unit-cube ones
    k = float(den.data_scale)
    x = clean.with_points(ref * k)
    for t in range(cfg.t_attack, 0, -1):
        scale = cfg.noise_scale if cfg.noise_mode == "constant" else cfg.noise_scale * t / cfg.t_attack
        x = reverse_step(den, x, t, z_adv, sched, seed=cfg.seed, noise_scale=scale)
        if not np.all(np.isfinite(x.points)):
            raise DivergenceError(f"diverged at step {t}")
        pts, before, after = suppress(x.points / k, ref, cfg, t)
        if not np.all(np.isfinite(pts)):
            raise DivergenceError(f"diverged at step {t}")
        if trace is not None:
            trace.append((t, before, after))
        x = x.with_points(pts * k)
    return PointCloud(x.points / k, label=clean.label, id=clean.id)


def _sign_attack(model, points, labels, eps, steps, step_size, rng=None):
    x0 = np.array(points, dtype=np.float64)
    if eps == 0:
        return x0
    x = x0.copy()
    if rng is not None:
        x = x + rng.uniform(-eps, eps, size=x.shape)
    for _ in range(steps):
        g = input_gradients(model, x, labels)
        x = np.clip(x + step_size * np.sign(g), x0 - eps, x0 + eps)
    return x


def fgsm_batch(model: PointNetLite, clouds: Sequence[PointCloud], cfg: BaselineConfig) -> list[PointCloud]:
    pts = np.stack([c.points for c in clouds])
    labels = np.array([c.label for c in clouds])
    out = _sign_attack(model, pts, labels, cfg.eps, 1, cfg.eps)
    return [c.with_points(p) for c, p in zip(clouds, out)]


def ifgsm_batch(model: PointNetLite, clouds: Sequence[PointCloud], cfg: BaselineConfig) -> list[PointCloud]:
    pts = np.stack([c.points for c in clouds])
    labels = np.array([c.label for c in clouds])
    out = _sign_attack(model, pts, labels, cfg.eps, cfg.steps, cfg.alpha)
    return [c.with_points(p) for c, p in zip(clouds, out)]


def pgd_batch(model: PointNetLite, clouds: Sequence[PointCloud], cfg: BaselineConfig) -> list[PointCloud]:
    out = []
    # each cloud's random start depends only on its own position-free stream
    for c in clouds:
        rng = make_rng(cfg.seed, "pgd", c.id or "")
        p = _sign_attack(model, c.points[None], np.array([c.label]), cfg.eps, cfg.steps, cfg.alpha, rng)
        out.append(c.with_points(p[0]))
    return out


def fgsm(model: PointNetLite, cloud: PointCloud, cfg: BaselineConfig = BaselineConfig()) -> PointCloud:
    """One signed-gradient step of size eps on the proxy's cross-entropy."""
    return fgsm_batch(model, [cloud], cfg)[0]


def ifgsm(model: PointNetLite, cloud: PointCloud, cfg: BaselineConfig = BaselineConfig()) -> PointCloud:
    """Iterated FGSM, projected onto the L-infinity ball of radius eps."""
    return ifgsm_batch(model, [cloud], cfg)[0]


def pgd(model: PointNetLite, cloud: PointCloud, cfg: BaselineConfig = BaselineConfig()) -> PointCloud:
    """IFGSM from a uniform random start inside the eps-ball."""
    return pgd_batch(model, [cloud], cfg)[0]
