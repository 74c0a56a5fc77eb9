import math

import numpy as np
import pytest
import torch

from advpc.attack import (
    AttackConfig,
    AttackError,
    BaselineConfig,
    diffusion_attack,
    fgsm,
    fgsm_batch,
    ifgsm,
    ldis_and_grad,
    pgd,
    select_guidance_latent,
    suppress,
)
from advpc.core import PointCloud, ShapeSpec, generate_shape, make_dataset, make_rng
from advpc.diffusion import Denoiser, LatentCode, LatentEncoder, encode_latent, make_schedule
from advpc.metrics import chamfer, mse_aligned
from advpc.nn import PointNetLite, TrainConfig, predict, train_classifier
from oracles import central_difference, rel_err


def _zero_denoiser(latent_dim=8, data_scale=1.0):
    den = Denoiser(latent_dim, (8,), seed=0, data_scale=data_scale)
    with torch.no_grad():
        for name, p in den.named_parameters():
            p.zero_()
    return den


def _latent(label=1, dim=8):
    return LatentCode(make_rng(0, "z").normal(size=dim), source_label=label)


def test_guidance_latent_two_classes():
    ds = make_dataset(3, 32, seed=0, kinds=("sphere", "cube"))
    enc = LatentEncoder(8, seed=1)
    z = select_guidance_latent(enc, ds, source_label=0, seed=4)
    assert z.source_label == 1
    again = select_guidance_latent(enc, ds, source_label=0, seed=4)
    np.testing.assert_array_equal(z.z, again.z)
    matches = [c for c in ds if c.label == 1 and np.array_equal(encode_latent(enc, c).z, z.z)]
    assert len(matches) == 1
    with pytest.raises(AttackError):
        select_guidance_latent(enc, [c for c in ds if c.label == 0], source_label=0)


def test_zero_denoiser_rescales_clean_cloud():
    sched = make_schedule(100, 1e-4, 0.02)
    clean = generate_shape(ShapeSpec("torus", 64, 1))
    cfg = AttackConfig(t_attack=100, opt_multiplier=0, noise_scale=0.0)
    factor = 1.0
    for t in range(1, 101):
        factor /= math.sqrt(1 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 99))
    for k in (1.0, 3.0):
        out = diffusion_attack(clean, _latent(), _zero_denoiser(data_scale=k), sched, cfg)
        np.testing.assert_allclose(out.points, clean.points * factor, rtol=1e-12)
        assert out.label == clean.label and out.id == clean.id


def test_strong_mse_suppression_returns_clean_cloud():
    # lr * lambda2 * 2 / n = 1 makes each inner step an exact projection back onto the clean cloud
    sched = make_schedule(20)
    clean = generate_shape(ShapeSpec("cube", 64, 1))
    den = Denoiser(8, (16,), seed=3, data_scale=3.0)
    cfg = AttackConfig(t_attack=20, opt_multiplier=1, lambda1=0.0, lambda2=32.0, opt_lr=1.0, noise_scale=1.0)
    out = diffusion_attack(clean, _latent(label=3), den, sched, cfg)
    assert chamfer(clean, out) <= 1e-24
    np.testing.assert_allclose(out.points, clean.points, atol=1e-12)


def test_attack_contracts():
    sched = make_schedule(10)
    clean = generate_shape(ShapeSpec("sphere", 48, 2))
    den = Denoiser(8, (16, 16), seed=1, data_scale=3.0)
    with pytest.raises(AttackError):
        diffusion_attack(clean, _latent(label=0), den, sched, AttackConfig(t_attack=10))
    with pytest.raises(AttackError):
        diffusion_attack(clean, _latent(), den, sched, AttackConfig(t_attack=11))
    trace = []
    out = diffusion_attack(clean, _latent(), den, sched, AttackConfig(t_attack=10, opt_multiplier=3), trace)
    assert len(out) == len(clean)
    assert mse_aligned(clean, out) >= 0
    assert [t for t, _, _ in trace] == list(range(10, 0, -1))
    assert all(after <= before for _, before, after in trace)
    again = diffusion_attack(clean, _latent(), den, sched, AttackConfig(t_attack=10, opt_multiplier=3))
    assert again == out


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(t_attack=0)
    with pytest.raises(ValueError):
        AttackConfig(lambda1=-1)
    with pytest.raises(ValueError):
        AttackConfig(noise_mode="cubic")
    with pytest.raises(ValueError):
        BaselineConfig(eps=-0.1)


def test_ldis_gradient_matches_finite_differences():
    rng = make_rng(21)
    clean = rng.uniform(-0.5, 0.5, size=(24, 3))
    x = clean + rng.normal(0, 0.03, size=clean.shape)
    cfg = AttackConfig(lambda1=1.0, lambda2=1.0)
    _, g = ldis_and_grad(x, clean, cfg)
    for flat in rng.choice(x.size, size=8, replace=False):
        idx = np.unravel_index(flat, x.shape)
        fd = central_difference(lambda y: ldis_and_grad(y, clean, cfg)[0], x, idx)
        assert rel_err(g[idx], fd) <= 1e-4


def test_suppress_never_increases_loss():
    rng = make_rng(2)
    clean = rng.uniform(-0.5, 0.5, size=(64, 3))
    for lr in (0.01, 0.5, 5.0, 50.0):
        x = clean + rng.normal(0, 0.05, size=clean.shape)
        out, before, after = suppress(x, clean, AttackConfig(opt_lr=lr, opt_multiplier=3))
        assert after <= before
        assert ldis_and_grad(out, clean, AttackConfig())[0] == pytest.approx(after)


def test_strict_descent_raises_when_both_tries_fail():
    rng = make_rng(5)
    clean = rng.uniform(-0.5, 0.5, size=(32, 3))
    x = clean + rng.normal(0, 0.05, size=clean.shape)
    cfg = AttackConfig(opt_lr=1e6, strict_descent=True)
    with pytest.raises(AttackError, match="L_DIS increased"):
        suppress(x, clean, cfg, t=7)
    loose = AttackConfig(opt_lr=1e6)
    out, before, after = suppress(x, clean, loose)
    np.testing.assert_array_equal(out, x)


@pytest.fixture(scope="module")
def toy_model():
    ds = make_dataset(8, 64, seed=5)
    return train_classifier(ds, TrainConfig(epochs=5, batch_size=8, lr=0.02, seed=1)), ds


def test_fgsm_contract(toy_model):
    model, ds = toy_model
    c = ds[0]
    assert fgsm(model, c, BaselineConfig(eps=0.0)) == c
    out = fgsm(model, c, BaselineConfig(eps=0.1))
    delta = np.abs(out.points - c.points)
    assert np.all(np.isclose(delta, 0.1, atol=1e-15) | (delta == 0))
    assert out.label == c.label


def test_ifgsm_collapses_to_fgsm(toy_model):
    model, ds = toy_model
    cfg = BaselineConfig(eps=0.05, steps=1, step_size=0.05)
    for c in ds[:4]:
        assert ifgsm(model, c, cfg) == fgsm(model, c, BaselineConfig(eps=0.05))


def test_iterative_attacks_stay_in_ball(toy_model):
    model, ds = toy_model
    cfg = BaselineConfig(eps=0.04, steps=5, seed=3)
    for c in ds[:4]:
        for out in (ifgsm(model, c, cfg), pgd(model, c, cfg)):
            assert np.max(np.abs(out.points - c.points)) <= 0.04 + 1e-15
    assert pgd(model, ds[0], cfg) == pgd(model, ds[0], cfg)
    assert pgd(model, ds[0], cfg) != pgd(model, ds[0], BaselineConfig(eps=0.04, steps=5, seed=4))


def test_fgsm_beats_random_signs(toy_model):
    model, _ = toy_model
    test = make_dataset(25, 64, seed=9, split="test")
    adv = fgsm_batch(model, test, BaselineConfig(eps=0.32))
    rng = make_rng(0, "random-sign")
    noisy = [c.with_points(c.points + 0.32 * rng.choice([-1.0, 1.0], size=c.points.shape)) for c in test]
    y = np.array([c.label for c in test])
    assert np.mean(predict(model, adv) != y) > np.mean(predict(model, noisy) != y)


def test_diffusion_attack_never_queries_a_classifier():
    PointNetLite("pointnet-lite", 4, seed=0)
    sched = make_schedule(10)
    clean = generate_shape(ShapeSpec("cube", 32, 0))
    before = PointNetLite.forward_calls
    diffusion_attack(clean, _latent(label=3), Denoiser(8, (16,), seed=0), sched, AttackConfig(t_attack=10))
    assert PointNetLite.forward_calls == before
