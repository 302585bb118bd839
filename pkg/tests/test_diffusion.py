import math

import numpy as np
import pytest
import torch

from ctstandard.nnet import params_digest

from ctstandard import codec as cm
from ctstandard import diffusion as dm
from ctstandard.diffusion import DiffusionConfig, LatentDiffusion, NoiseSchedule
from ctstandard.errors import SamplingError, TrainingError, ValidationError
from ctstandard.phantom import gen_paired_dataset


@pytest.fixture(scope="module")
def small_setup():
    pairs = gen_paired_dataset(0, 4, 64)
    ckpt = cm.train_codec([p.a for p in pairs] + [p.b for p in pairs],
                          cm.CodecConfig(latent_dim=16, image_size=64, epochs=2, batch_size=4, lr=1e-3))
    return pairs, ckpt


def test_schedule_shape():
    s = NoiseSchedule()
    assert s.T == 200
    assert np.all(np.diff(s.beta) > 0) and np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha_bar[-1] < 0.01
    assert NoiseSchedule(20).beta_end <= dm.BETA_MAX
    with pytest.raises(ValidationError):
        NoiseSchedule(0)


def test_forward_identity_when_beta_zero():
    s = NoiseSchedule(10, beta_start=0.0, beta_end=0.0)
    z = np.arange(4.0)
    noise = np.ones(4)
    assert np.array_equal(dm.forward_step(s, z, 5, noise), z)
    assert np.array_equal(dm.forward_diffuse(s, z, 10, noise), z)


def test_forward_diffuse_from_zero():
    s = NoiseSchedule()
    noise = np.random.default_rng(0).normal(size=8)
    for t in (1, 50, 200):
        out = dm.forward_diffuse(s, np.zeros(8), t, noise)
        assert np.allclose(out, math.sqrt(1 - s.alpha_bar[t - 1]) * noise)


def test_step_range():
    s = NoiseSchedule(10)
    for t in (0, 11):
        with pytest.raises(ValidationError):
            dm.forward_diffuse(s, np.zeros(2), t, np.zeros(2))


def test_initial_loss_is_mean_abs_normal(small_setup):
    pairs, ckpt = small_setup
    rows = []
    dm.train_diffusion(ckpt, pairs, DiffusionConfig(T=50, epochs=1, batch_size=64, draws_per_pair=16), rows)
    assert rows[0][1] == pytest.approx(math.sqrt(2 / math.pi), abs=0.05)


def test_training_determinism_and_frozen_codec(small_setup):
    pairs, ckpt = small_setup
    before = params_digest(ckpt)
    cfg = DiffusionConfig(T=50, epochs=2, batch_size=4, lr=1e-3)
    d1, d2 = dm.train_diffusion(ckpt, pairs, cfg), dm.train_diffusion(ckpt, pairs, cfg)
    assert params_digest(d1, prefixes=("den.",)) == params_digest(d2, prefixes=("den.",))
    assert params_digest(ckpt) == before
    assert not any(k.startswith(("enc.", "dec.")) for k in d1.entries)


def test_sampler_shape_and_seed(small_setup):
    pairs, ckpt = small_setup
    diff = dm.train_diffusion(ckpt, pairs, DiffusionConfig(T=20, epochs=1, batch_size=4))
    model = LatentDiffusion.from_checkpoint(diff)
    z = cm.encode(ckpt, pairs[0].a)
    trace = []
    out = model.sample(z, 3, trace)
    assert out.shape == z.shape and len(trace) == 20
    assert np.array_equal(out, model.sample(z, 3))
    assert not np.array_equal(out, model.sample(z, 4))
    assert model.sample(np.stack([z, z]), 3).shape == (2, 16)
    img = dm.Standardizer(ckpt, diff)(pairs[0].a, 0)
    assert img.shape == (64, 64) and np.all(np.isfinite(img))


def test_sampler_raises_on_non_finite(small_setup):
    pairs, ckpt = small_setup
    diff = dm.train_diffusion(ckpt, pairs, DiffusionConfig(T=10, epochs=1, batch_size=4))
    model = LatentDiffusion.from_checkpoint(diff)
    with torch.no_grad():
        next(model.net.parameters()).fill_(float("inf"))
    with pytest.raises(SamplingError):
        model.sample(cm.encode(ckpt, pairs[0].a), 0)


def test_training_rejects_non_finite_latents(small_setup):
    pairs, ckpt = small_setup
    bad = [(p.a, np.full_like(p.b, np.nan)) for p in pairs]
    with pytest.raises(TrainingError):
        dm.train_diffusion(ckpt, bad, DiffusionConfig(T=10, epochs=1))


def test_checkpoint_validation():
    from ctstandard.dataio import Checkpoint

    with pytest.raises(ValidationError):
        LatentDiffusion.from_checkpoint(Checkpoint({}))
    with pytest.raises(ValidationError):
        DiffusionConfig(draws_per_pair=0)
