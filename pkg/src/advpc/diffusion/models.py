"""Latent encoder, affine-coupling flow prior and conditional noise predictor."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..core import make_rng
from ..nn.classifier import DTYPE, init_linear, mlp

TIME_EMBED_DIM = 32


class LatentEncoder(nn.Module):
    """PointNet trunk producing the mean and log-variance of q(z | x0)."""

    def __init__(self, latent_dim: int = 64, trunk=(128, 256), seed: int = 0):
        super().__init__()
        self.latent_dim = latent_dim
        self.trunk = mlp((3, *trunk))
        self.head = mlp((trunk[-1], 128, 2 * latent_dim), final_act=False)
        rng = make_rng(seed, "init", "encoder")
        for m in self.modules():
            if isinstance(m, nn.Linear):
                init_linear(m, rng)

    def forward(self, x: torch.Tensor):
        out = self.head(self.trunk(x).max(dim=-2).values)
        return out[..., : self.latent_dim], out[..., self.latent_dim :]


def time_embedding(t, dim: int = TIME_EMBED_DIM) -> torch.Tensor:
    """Sinusoidal embedding of integer steps; ``t`` scalar or 1-D, output (..., dim)."""
    t = torch.as_tensor(t, dtype=DTYPE)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=DTYPE) / half)
    args = t[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ConditionedLinear(nn.Module):
    """Linear map of the point feature plus a per-cloud context shift.

    Equivalent to a linear layer over the concatenation [h, context].
    """

    def __init__(self, d_in: int, d_ctx: int, d_out: int):
        super().__init__()
        self.point = nn.Linear(d_in, d_out, dtype=DTYPE)
        self.ctx = nn.Linear(d_ctx, d_out, bias=False, dtype=DTYPE)

    def forward(self, h, ctx):
        return self.point(h) + self.ctx(ctx)[..., None, :]


class Denoiser(nn.Module):
    """Pointwise noise predictor eps_hat(x_t, t, z) with shared weights across points.

    ``data_scale`` records the factor that maps unit-cube coordinates into the
    diffusion space the network was trained in (about unit variance per coordinate).
    """

    def __init__(self, latent_dim: int = 64, hidden=(256, 256, 256), seed: int = 0, data_scale: float = 1.0):
        super().__init__()
        self.latent_dim = latent_dim
        self.register_buffer("data_scale", torch.tensor(float(data_scale), dtype=DTYPE))
        ctx_dim = TIME_EMBED_DIM + latent_dim
        sizes = (3, *hidden)
        self.layers = nn.ModuleList(ConditionedLinear(a, ctx_dim, b) for a, b in zip(sizes[:-1], sizes[1:]))
        self.out = nn.Linear(hidden[-1], 3, dtype=DTYPE)
        self.act = nn.SiLU()
        rng = make_rng(seed, "init", "denoiser")
        for m in self.modules():
            if isinstance(m, nn.Linear):
                init_linear(m, rng)

    def forward(self, x: torch.Tensor, t, z: torch.Tensor) -> torch.Tensor:
        """x: (B, n, 3) or (n, 3); t: int or (B,); z: (B, D) or (D,)."""
        squeeze = x.dim() == 2
        if squeeze:
            x, z = x[None], z[None]
        temb = time_embedding(t)
        if temb.dim() == 1:
            temb = temb.expand(x.shape[0], -1)
        ctx = torch.cat([temb, z], dim=-1)
        h = x
        for layer in self.layers:
            h = self.act(layer(h, ctx))
        eps = self.out(h)
        return eps[0] if squeeze else eps


class CouplingLayer(nn.Module):
    """Affine coupling: one half of the vector sets scale and shift of the other."""

    def __init__(self, dim: int, parity: int, hidden: int = 128, scale_bound: float = 2.0):
        super().__init__()
        self.dim = dim
        self.parity = parity
        self.scale_bound = scale_bound
        self.n_cond = dim // 2 if parity == 0 else dim - dim // 2
        n_out = dim - self.n_cond
        self.net = mlp((self.n_cond, hidden, hidden), act=nn.Tanh)
        self.scale = nn.Linear(hidden, n_out, dtype=DTYPE)
        self.shift = nn.Linear(hidden, n_out, dtype=DTYPE)

    def _split(self, v):
        if self.parity == 0:
            return v[..., : self.n_cond], v[..., self.n_cond :]
        return v[..., self.dim - self.n_cond :], v[..., : self.dim - self.n_cond]

    def _join(self, cond, other):
        if self.parity == 0:
            return torch.cat([cond, other], dim=-1)
        return torch.cat([other, cond], dim=-1)

    def _params(self, cond):
        h = self.net(cond)
        # tanh keeps |log scale| <= scale_bound so the inverse always exists
        s = self.scale_bound * torch.tanh(self.scale(h) / self.scale_bound)
        return s, self.shift(h)

    def forward(self, w):
        cond, other = self._split(w)
        s, b = self._params(cond)
        return self._join(cond, other * torch.exp(s) + b), s.sum(dim=-1)

    def inverse(self, z):
        cond, other = self._split(z)
        s, b = self._params(cond)
        return self._join(cond, (other - b) * torch.exp(-s)), -s.sum(dim=-1)


class CouplingFlow(nn.Module):
    """Invertible map w -> z with a standard-normal base density on w."""

    def __init__(self, dim: int = 64, n_layers: int = 4, hidden: int = 128, seed: int = 0, identity: bool = True):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(CouplingLayer(dim, i % 2, hidden) for i in range(n_layers))
        rng = make_rng(seed, "init", "flow")
        for layer in self.layers:
            for m in layer.net.modules():
                if isinstance(m, nn.Linear):
                    init_linear(m, rng)
            init_linear(layer.scale, rng, zero=identity)
            init_linear(layer.shift, rng, zero=identity)

    def forward(self, w):
        log_det = torch.zeros(w.shape[:-1], dtype=w.dtype)
        for layer in self.layers:
            w, ld = layer(w)
            log_det = log_det + ld
        return w, log_det

    def inverse(self, z):
        log_det = torch.zeros(z.shape[:-1], dtype=z.dtype)
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z)
            log_det = log_det + ld
        return z, log_det

    def log_prob(self, z):
        w, log_det_inv = self.inverse(z)
        base = -0.5 * (w**2).sum(dim=-1) - 0.5 * self.dim * math.log(2 * math.pi)
        return base + log_det_inv


def _vec(v) -> torch.Tensor:
    return torch.as_tensor(np.array(v, dtype=np.float64))


def flow_forward(flow: CouplingFlow, w) -> tuple[np.ndarray, float]:
    with torch.no_grad():
        z, ld = flow(_vec(w))
    return z.numpy(), float(ld)


def flow_inverse(flow: CouplingFlow, z) -> tuple[np.ndarray, float]:
    with torch.no_grad():
        w, ld = flow.inverse(_vec(z))
    return w.numpy(), float(ld)


def flow_log_prob(flow: CouplingFlow, z) -> float:
    """log p(z) = log N(A^-1(z)) - log|det J_A(A^-1(z))|."""
    with torch.no_grad():
        return float(flow.log_prob(_vec(z)))
