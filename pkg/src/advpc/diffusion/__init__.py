"""Latent-conditioned denoising diffusion over point sets."""

from .models import (
    CouplingFlow,
    Denoiser,
    LatentEncoder,
    flow_forward,
    flow_inverse,
    flow_log_prob,
    time_embedding,
)
from .sampling import (
    DiffusionModel,
    DiffusionTrainConfig,
    LatentCode,
    encode_latent,
    generate,
    load_diffusion,
    predict_noise,
    reverse_step,
    sample_prior_latent,
    save_diffusion,
    train_diffusion,
)
from .schedule import DiffusionSchedule, forward_diffuse, make_schedule

__all__ = [
    "CouplingFlow",
    "Denoiser",
    "DiffusionModel",
    "DiffusionSchedule",
    "DiffusionTrainConfig",
    "LatentCode",
    "LatentEncoder",
    "encode_latent",
    "flow_forward",
    "flow_inverse",
    "flow_log_prob",
    "forward_diffuse",
    "generate",
    "load_diffusion",
    "make_schedule",
    "predict_noise",
    "reverse_step",
    "sample_prior_latent",
    "save_diffusion",
    "time_embedding",
    "train_diffusion",
]
