"""Properties of the trained default models that go beyond the acceptance thresholds."""

import dataclasses

import numpy as np
import pytest

from advpc.attack import BaselineConfig, fgsm_batch, ifgsm_batch
from advpc.diffusion import encode_latent
from advpc.harness import run_attack
from advpc.metrics import asr, chamfer
from advpc.nn import predict

pytestmark = pytest.mark.slow


def test_encoder_separates_classes(trained):
    enc = trained.models.diffusion.enc
    clouds = trained.attack_set
    z = np.stack([encode_latent(enc, c).z for c in clouds])
    labels = np.array([c.label for c in clouds])
    d = np.linalg.norm(z[:, None] - z[None], axis=-1)
    same = labels[:, None] == labels[None]
    off_diag = ~np.eye(len(clouds), dtype=bool)
    assert d[same & off_diag].mean() < d[~same].mean()


def test_more_suppression_stays_closer(trained, diffusion_run):
    """m = 5 inner iterations keeps the mean chamfer at or below the m = 1 result."""
    clouds = trained.attack_set[:50]
    base = diffusion_run.spec
    spec = dataclasses.replace(base, params={**base.params, "opt_multiplier": 5})
    adv5, _ = run_attack(spec, clouds, trained.train, trained.models, trained.cfg)
    cd1 = np.mean([chamfer(c, a) for c, a in zip(clouds, diffusion_run.adv[:50])])
    cd5 = np.mean([chamfer(c, a) for c, a in zip(clouds, adv5)])
    assert cd5 <= cd1


def test_iterative_attack_is_at_least_as_strong_white_box(trained):
    proxy = trained.models.proxy
    clouds = trained.attack_set
    labels = np.array([c.label for c in clouds])
    one = asr(predict(proxy, fgsm_batch(proxy, clouds, BaselineConfig(eps=0.32))), labels)
    many = asr(predict(proxy, ifgsm_batch(proxy, clouds, BaselineConfig(eps=0.32, steps=10))), labels)
    assert many >= one


def test_fgsm_beats_random_signs_on_trained_proxy(trained):
    # a small budget: at 0.32 both perturbations push every cloud into the same class
    eps = 0.05
    proxy = trained.models.proxy
    clouds = trained.attack_set
    labels = np.array([c.label for c in clouds])
    rng = np.random.default_rng(0)
    noisy = [c.with_points(c.points + eps * rng.choice([-1.0, 1.0], size=c.points.shape)) for c in clouds]
    adv = fgsm_batch(proxy, clouds, BaselineConfig(eps=eps))
    assert asr(predict(proxy, adv), labels) > asr(predict(proxy, noisy), labels)
