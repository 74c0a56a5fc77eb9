"""Adversarial point clouds by latent-guided reverse diffusion."""

__version__ = "0.1.0"
