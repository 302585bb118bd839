"""Conditional DDPM over codec latents.

The standard-domain latent ``Z_B`` is corrupted in closed form and a 1-D
U-Net learns, with an L1 loss, to predict the added noise given the
corrupted latent, the non-standard latent ``Z_A`` and the step index.
Sampling runs the ancestral reverse chain from pure noise, conditioned on
``Z_A``.

Latents are standardized per coordinate (statistics from the training set,
stored in the checkpoint) before entering the chain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .codec import Codec, scheduled_lr
from .dataio import Checkpoint, ImageTensor, Unit
from .errors import InvariantViolation, SamplingError, TrainingError, ValidationError
from .nnet import (Adam, Denoiser, init_uniform_fan_in, load_params, module_digest, params_digest,
                   params_to_entries)

log = logging.getLogger(__name__)


BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule; arrays are indexed by step ``t`` in ``1..T`` at ``[t - 1]``.

    ``beta_start``/``beta_end`` default to the T=1000 reference values scaled
    by ``1000 / T``, which keeps the total corruption (and so
    ``alpha_bar[T]``) comparable for short chains; ``beta_end`` is capped at
    ``BETA_MAX`` for very short chains.
    """

    T: int = 200
    beta_start: Optional[float] = None
    beta_end: Optional[float] = None

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError(f"T must be positive, got {self.T}")
        scale = 1000.0 / self.T
        if self.beta_start is None:
            object.__setattr__(self, "beta_start", 1e-4 * scale)
        if self.beta_end is None:
            object.__setattr__(self, "beta_end", min(0.02 * scale, BETA_MAX))
        if not 0 <= self.beta_start <= self.beta_end < 1:
            raise ValidationError("need 0 <= beta_start <= beta_end < 1")

    @property
    def beta(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.T)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    def check_step(self, t) -> None:
        tt = np.asarray(t)
        if tt.min() < 1 or tt.max() > self.T:
            raise ValidationError(f"step index must lie in [1, {self.T}], got {t}")


def forward_diffuse(sched: NoiseSchedule, z0, t, noise) -> np.ndarray:
    """Closed-form sample of ``q(z_t | z_0)`` for the supplied standard-normal noise."""
    sched.check_step(t)
    ab = sched.alpha_bar[np.asarray(t) - 1]
    z0 = np.asarray(z0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if np.ndim(ab):
        ab = ab[:, None]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise


def forward_step(sched: NoiseSchedule, z_prev, t, noise) -> np.ndarray:
    """One transition of the forward chain, ``q(z_t | z_{t-1})``."""
    sched.check_step(t)
    b = sched.beta[t - 1]
    return np.sqrt(1.0 - b) * np.asarray(z_prev, dtype=np.float64) + np.sqrt(b) * np.asarray(noise)


@dataclass
class DiffusionConfig:
    T: int = 200
    epochs: int = 20
    lr: float = 1e-4
    batch_size: int = 16
    # independent (t, noise) draws per pair in each epoch
    draws_per_pair: int = 1
    seed: int = 0
    lr_schedule: str = "constant"

    def __post_init__(self):
        for name in ("T", "epochs", "lr", "batch_size", "draws_per_pair"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"diffusion config field {name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _scalar(v) -> ImageTensor:
    return ImageTensor(np.array([v], dtype=np.float32), Unit.DIMENSIONLESS)


class LatentDiffusion:
    """Trained denoiser plus schedule and latent normalization."""

    def __init__(self, net: Denoiser, sched: NoiseSchedule, mean: np.ndarray, std: np.ndarray):
        self.net = net.eval()
        self.sched = sched
        self.mean = np.asarray(mean, dtype=np.float32)
        self.std = np.asarray(std, dtype=np.float32)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "LatentDiffusion":
        for key in ("meta.T", "meta.beta_start", "meta.beta_end", "lat.mean", "lat.std"):
            if key not in ckpt:
                raise ValidationError(f"diffusion checkpoint lacks {key}")
        T = int(ckpt["meta.T"].data[0])
        sched = NoiseSchedule(T, float(ckpt["meta.beta_start"].data[0]), float(ckpt["meta.beta_end"].data[0]))
        mean, std = ckpt["lat.mean"].data, ckpt["lat.std"].data
        net = Denoiser(len(mean), T)
        load_params(net, ckpt, "den")
        for p in net.parameters():
            p.requires_grad_(False)
        return cls(net, sched, mean, std)

    def normalize(self, z):
        return (np.asarray(z, dtype=np.float32) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float32) * self.std + self.mean

    def sample(self, z_a, seed: int, trace: Optional[list] = None) -> np.ndarray:
        """Ancestral sampling of standardized latent(s) conditioned on ``z_a``."""
        za = np.asarray(z_a, dtype=np.float32)
        single = za.ndim == 1
        cond = torch.from_numpy(self.normalize(za[None] if single else za))
        gen = torch.Generator().manual_seed(int(seed))
        beta = torch.tensor(self.sched.beta, dtype=torch.float64)
        alpha = 1.0 - beta
        alpha_bar = torch.cumprod(alpha, 0)
        x = torch.randn(cond.shape, generator=gen, dtype=torch.float64)
        with torch.no_grad():
            for t in range(self.sched.T, 0, -1):
                tt = torch.full((len(cond),), t, dtype=torch.int64)
                eps = self.net(x.float(), cond, tt).double()
                mean = (x - beta[t - 1] / torch.sqrt(1.0 - alpha_bar[t - 1]) * eps) / torch.sqrt(alpha[t - 1])
                if t > 1:
                    xi = torch.randn(cond.shape, generator=gen, dtype=torch.float64)
                    x = mean + torch.sqrt(beta[t - 1]) * xi
                else:
                    x = mean
                if not torch.isfinite(x).all():
                    raise SamplingError(f"non-finite latent at step {t}")
                if trace is not None:
                    trace.append(x.float().numpy().copy())
        out = self.denormalize(x.numpy())
        return out[0] if single else out


def _l1_noise_loss(net, z0, cond, t, noise, alpha_bar):
    ab = alpha_bar[t - 1][:, None]
    zt = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * noise
    return (noise - net(zt, cond, t)).abs().mean()


def train_diffusion(
    codec_ckpt: Checkpoint,
    pairs: Sequence,
    cfg: DiffusionConfig = DiffusionConfig(),
    log_rows: Optional[list] = None,
) -> Checkpoint:
    """Train the conditional denoiser on ``(A, B)`` image pairs with the codec frozen.

    ``pairs`` may hold ``PairedSample`` objects or ``(a, b)`` tuples.
    ``log_rows`` receives ``(step, loss)`` per optimizer step.
    """
    if len(pairs) == 0:
        raise ValidationError("diffusion training needs at least one pair")
    before = params_digest(codec_ckpt)
    codec = Codec.from_checkpoint(codec_ckpt)
    frozen = module_digest(codec.enc) + module_digest(codec.dec)
    a = np.stack([p.a if hasattr(p, "a") else p[0] for p in pairs])
    b = np.stack([p.b if hasattr(p, "b") else p[1] for p in pairs])
    za, zb = codec.encode(a), codec.encode(b)
    pooled = np.concatenate([za, zb])
    mean = pooled.mean(axis=0).astype(np.float32)
    std = (pooled.std(axis=0) + 1e-6).astype(np.float32)

    sched = NoiseSchedule(cfg.T)
    za_n = torch.from_numpy((za - mean) / std)
    zb_n = torch.from_numpy((zb - mean) / std)
    alpha_bar = torch.tensor(sched.alpha_bar, dtype=torch.float32)

    torch.manual_seed(cfg.seed)
    net = Denoiser(codec.latent_dim, cfg.T)
    init_uniform_fan_in(net, cfg.seed + 7)
    net.zero_output_layer()
    opt = Adam([(f"den.{n}", p) for n, p in net.named_parameters()], lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)

    n = len(pairs) * cfg.draws_per_pair
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen) % len(pairs)
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            t = torch.randint(1, cfg.T + 1, (len(idx),), generator=gen)
            noise = torch.randn((len(idx), codec.latent_dim), generator=gen)
            opt.lr = scheduled_lr(cfg.lr, cfg.lr_schedule, step, total_steps)
            loss = _l1_noise_loss(net, zb_n[idx], za_n[idx], t, noise, alpha_bar)
            if not torch.isfinite(loss):
                raise TrainingError(f"diffusion loss became non-finite at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            if log_rows is not None:
                log_rows.append((step, loss.item()))
        log.info("diffusion epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, loss.item())

    if params_digest(codec_ckpt) != before or module_digest(codec.enc) + module_digest(codec.dec) != frozen:
        raise InvariantViolation("codec parameters changed during diffusion training")

    entries = params_to_entries(net, "den")
    entries.update({
        "meta.T": _scalar(cfg.T),
        "meta.beta_start": _scalar(sched.beta_start),
        "meta.beta_end": _scalar(sched.beta_end),
        "lat.mean": ImageTensor(mean, Unit.DIMENSIONLESS),
        "lat.std": ImageTensor(std, Unit.DIMENSIONLESS),
    })
    return Checkpoint(entries)


def diffusion_loss(codec_ckpt: Checkpoint, diff_ckpt: Checkpoint, pairs: Sequence, seed: int = 0,
                   draws: int = 8) -> float:
    """Mean L1 noise-prediction loss on ``pairs`` with fixed (t, noise) draws."""
    codec = Codec.from_checkpoint(codec_ckpt)
    model = LatentDiffusion.from_checkpoint(diff_ckpt)
    a = np.stack([p.a if hasattr(p, "a") else p[0] for p in pairs])
    b = np.stack([p.b if hasattr(p, "b") else p[1] for p in pairs])
    za = torch.from_numpy(model.normalize(codec.encode(a))).repeat(draws, 1)
    zb = torch.from_numpy(model.normalize(codec.encode(b))).repeat(draws, 1)
    gen = torch.Generator().manual_seed(seed)
    t = torch.randint(1, model.sched.T + 1, (len(za),), generator=gen)
    noise = torch.randn(za.shape, generator=gen)
    alpha_bar = torch.tensor(model.sched.alpha_bar, dtype=torch.float32)
    with torch.no_grad():
        return float(_l1_noise_loss(model.net, zb, za, t, noise, alpha_bar))


def sample_standardized(codec_ckpt: Checkpoint, diff_ckpt: Checkpoint, z_a, seed: int) -> np.ndarray:
    Codec.from_checkpoint(codec_ckpt)  # validates the codec entries
    return LatentDiffusion.from_checkpoint(diff_ckpt).sample(z_a, seed)


class Standardizer:
    """Encode, sample a standard-domain latent, decode."""

    def __init__(self, codec_ckpt: Checkpoint, diff_ckpt: Checkpoint):
        self.codec = Codec.from_checkpoint(codec_ckpt)
        self.model = LatentDiffusion.from_checkpoint(diff_ckpt)
        if len(self.model.mean) != self.codec.latent_dim:
            raise ValidationError("diffusion and codec checkpoints disagree on latent_dim")

    def __call__(self, img, seed: int) -> np.ndarray:
        x = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float32)
        z = self.codec.encode(x)
        return self.codec.decode(self.model.sample(z, seed))


def standardize_image(codec_ckpt: Checkpoint, diff_ckpt: Checkpoint, a, seed: int) -> np.ndarray:
    return Standardizer(codec_ckpt, diff_ckpt)(a, seed)
