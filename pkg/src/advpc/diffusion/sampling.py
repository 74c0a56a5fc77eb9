"""Latent encoding, reverse steps, unconditional generation and joint training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..core import PointCloud, make_rng, normalize_unit_cube
from ..nn.classifier import DivergenceError
from ..nn.container import load_module_tensors, load_params, module_tensors, save_params
from .models import CouplingFlow, Denoiser, LatentEncoder
from .schedule import DiffusionSchedule, make_schedule


@dataclass(frozen=True, eq=False)
class LatentCode:
    z: np.ndarray
    source_label: int | None = None

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64)
        if z.ndim != 1 or not np.all(np.isfinite(z)):
            raise ValueError("latent must be a finite vector")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


def encode_latent(enc: LatentEncoder, cloud: PointCloud, seed: int = 0, deterministic: bool = True) -> LatentCode:
    """Encode a cloud; the posterior mean when ``deterministic``, else a reparameterized draw."""
    with torch.no_grad():
        mu, logvar = enc(torch.from_numpy(np.array(cloud.points)))
    z = mu.numpy()
    if not deterministic:
        eps = make_rng(seed, "encode").standard_normal(z.shape)
        z = z + np.exp(0.5 * logvar.numpy()) * eps
    return LatentCode(z, cloud.label)


def predict_noise(den: Denoiser, points: np.ndarray, t: int, z: LatentCode) -> np.ndarray:
    with torch.no_grad():
        return den(torch.from_numpy(np.array(points)), t, torch.from_numpy(np.array(z.z))).numpy()


def reverse_step(
    den: Denoiser,
    xt: PointCloud,
    t: int,
    z: LatentCode,
    sched: DiffusionSchedule,
    seed: int = 0,
    noise_scale: float = 1.0,
) -> PointCloud:
    """One ancestral step x_t -> x_{t-1} with epsilon-parameterized mean and variance beta_t.

    ``noise_scale`` multiplies the stochastic term; no noise is added at t = 1.
    """
    sched.check_step(t)
    eps_hat = predict_noise(den, xt.points, t, z)
    beta, alpha = sched.beta(t), sched.alpha(t)
    mean = (xt.points - (beta / math.sqrt(sched.one_minus_alpha_bar(t))) * eps_hat) / math.sqrt(alpha)
    if t > 1 and noise_scale != 0:
        eta = make_rng(seed, "reverse", t).standard_normal(mean.shape)
        mean = mean + noise_scale * math.sqrt(beta) * eta
    return xt.with_points(mean)


def sample_prior_latent(flow: CouplingFlow, seed: int = 0) -> LatentCode:
    w = make_rng(seed, "prior-latent").standard_normal(flow.dim)
    with torch.no_grad():
        z, _ = flow(torch.from_numpy(w))
    return LatentCode(z.numpy())


def generate(
    den: Denoiser,
    flow: CouplingFlow | None,
    z: LatentCode | None,
    sched: DiffusionSchedule,
    n_points: int = 256,
    seed: int = 0,
) -> PointCloud:
    """Run the full reverse chain from Gaussian noise; a latent is drawn from the flow when ``z`` is None."""
    if z is None:
        if flow is None:
            raise ValueError("need either a latent or a flow to sample one from")
        z = sample_prior_latent(flow, seed)
    x = PointCloud(make_rng(seed, "prior-points").standard_normal((n_points, 3)), label=z.source_label)
    for t in range(sched.T, 0, -1):
        x = reverse_step(den, x, t, z, sched, seed)
    return normalize_unit_cube(x.with_points(x.points / float(den.data_scale)))


@dataclass
class DiffusionTrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    warmup_epochs: int = 1
    seed: int = 0
    points_per_sample: int = 128
    prior_weight: float = 1e-3
    latent_dim: int = 64
    flow_layers: int = 4
    denoiser_hidden: tuple[int, ...] = (128, 128, 128)
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.points_per_sample < 1:
            raise ValueError("epochs, batch_size and points_per_sample must be positive")
        if self.lr < 0 or self.prior_weight < 0:
            raise ValueError("lr and prior_weight must be non-negative")
        if self.T < 1 or not (0 < self.beta_start <= self.beta_end < 1):
            raise ValueError(f"need T >= 1 and 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")


@dataclass
class DiffusionModel:
    enc: LatentEncoder
    den: Denoiser
    flow: CouplingFlow
    sched: DiffusionSchedule
    history: list[float] = field(default_factory=list)
    eval_history: list[float] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.enc.latent_dim


def _batch_losses(model: DiffusionModel, x0: torch.Tensor, rng: np.random.Generator, k: int, prior_weight: float):
    """epsilon-matching loss and latent prior loss for a batch of full clouds (B, n, 3)."""
    B, n, _ = x0.shape
    mu, logvar = model.enc(x0)
    z = mu + torch.exp(0.5 * logvar) * torch.from_numpy(rng.standard_normal(tuple(mu.shape)))
    t = rng.integers(1, model.sched.T + 1, size=B)
    ab = torch.from_numpy(model.sched.alpha_bars[t - 1])[:, None, None]
    s2 = torch.from_numpy(model.sched.one_minus_alpha_bars[t - 1])[:, None, None]
    sub = np.argsort(rng.uniform(size=(B, n)), axis=1)[:, : min(k, n)]
    pts = torch.gather(x0, 1, torch.from_numpy(sub)[..., None].expand(-1, -1, 3)) * model.den.data_scale
    eps = torch.from_numpy(rng.standard_normal(tuple(pts.shape)))
    xt = torch.sqrt(ab) * pts + torch.sqrt(s2) * eps
    eps_hat = model.den(xt, torch.from_numpy(t.astype(np.float64)), z)
    eps_loss = ((eps - eps_hat) ** 2).mean()
    D = mu.shape[-1]
    entropy = 0.5 * (D * (1.0 + math.log(2 * math.pi)) + logvar.sum(dim=-1))
    prior_loss = (-model.flow.log_prob(z) - entropy).mean() / D
    return eps_loss, eps_loss + prior_weight * prior_loss


def train_diffusion(dataset: Sequence[PointCloud], cfg: DiffusionTrainConfig = DiffusionTrainConfig(), log=None) -> DiffusionModel:
    """Jointly fit encoder, denoiser and flow prior with Adam.

    ``history`` records the per-epoch mean epsilon-matching loss;
    ``eval_history`` the same loss on a fixed probe batch with frozen noise.
    """
    sizes = {len(c) for c in dataset}
    if len(sizes) != 1:
        raise ValueError("all training clouds must have the same number of points")
    raw = np.stack([c.points for c in dataset])
    # diffusion runs on coordinates rescaled to unit RMS; the encoder sees unit-cube clouds
    scale = 1.0 / float(np.sqrt(np.mean(raw**2)))
    data = torch.from_numpy(raw)
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model = DiffusionModel(
        enc=LatentEncoder(cfg.latent_dim, seed=cfg.seed),
        den=Denoiser(cfg.latent_dim, cfg.denoiser_hidden, seed=cfg.seed, data_scale=scale),
        flow=CouplingFlow(cfg.latent_dim, cfg.flow_layers, seed=cfg.seed),
        sched=sched,
    )
    params = [*model.enc.parameters(), *model.den.parameters(), *model.flow.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    steps_per_epoch = -(-len(dataset) // cfg.batch_size)
    warmup = max(1, cfg.warmup_epochs * steps_per_epoch)
    total_steps = max(warmup + 1, cfg.epochs * steps_per_epoch)

    def lr_factor(step):
        # linear warmup, then cosine decay down to 5% of the base rate
        if step < warmup:
            return (step + 1) / warmup
        frac = (step - warmup) / (total_steps - warmup)
        return 0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))

    sched_lr = torch.optim.lr_scheduler.LambdaLR(opt, lr_factor)
    probe = data[: min(len(dataset), 4 * cfg.batch_size)]

    for epoch in range(cfg.epochs):
        rng = make_rng(cfg.seed, "train-diff", epoch)
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            eps_loss, loss = _batch_losses(model, data[idx], rng, cfg.points_per_sample, cfg.prior_weight)
            if not torch.isfinite(loss):
                raise DivergenceError(f"divergence at epoch {epoch}: non-finite diffusion loss")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sched_lr.step()
            total += float(eps_loss.detach()) * len(idx)
        model.history.append(total / len(order))
        with torch.no_grad():
            probe_loss, _ = _batch_losses(model, probe, make_rng(cfg.seed, "probe"), cfg.points_per_sample, 0.0)
        model.eval_history.append(float(probe_loss))
        if log is not None:
            log(f"[diffusion] epoch {epoch + 1}/{cfg.epochs} eps_loss={model.history[-1]:.4f}")
    return model


def save_diffusion(path, model: DiffusionModel, extra: dict | None = None):
    tensors = {
        **module_tensors(model.enc, "enc"),
        **module_tensors(model.den, "den"),
        **module_tensors(model.flow, "flow"),
        "sched/betas": np.array(model.sched.betas),
    }
    meta = {
        "kind": "diffusion",
        "latent_dim": model.enc.latent_dim,
        "flow_layers": len(model.flow.layers),
        "denoiser_hidden": [layer.point.out_features for layer in model.den.layers],
        "history": model.history,
        "eval_history": model.eval_history,
        **(extra or {}),
    }
    return save_params(path, tensors, meta)


def load_diffusion(path) -> DiffusionModel:
    meta, tensors = load_params(path)
    if meta.get("kind") != "diffusion":
        raise ValueError(f"{path} does not hold diffusion parameters")
    D = meta["latent_dim"]
    model = DiffusionModel(
        enc=LatentEncoder(D),
        den=Denoiser(D, tuple(meta["denoiser_hidden"])),
        flow=CouplingFlow(D, meta["flow_layers"]),
        sched=DiffusionSchedule(tensors["sched/betas"]),
        history=list(meta.get("history", [])),
        eval_history=list(meta.get("eval_history", [])),
    )
    load_module_tensors(model.enc, tensors, "enc")
    load_module_tensors(model.den, tensors, "den")
    load_module_tensors(model.flow, tensors, "flow")
    return model
