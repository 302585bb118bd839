"""Stage 1: train the encoder-decoder on every image, then freeze it."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .dataio import Checkpoint, ImageTensor, Unit
from .errors import ShapeError, TrainingError, ValidationError
from .nnet import Adam, Decoder, Encoder, init_uniform_fan_in, load_params, params_to_entries

log = logging.getLogger(__name__)

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass
class CodecConfig:
    latent_dim: int = 128
    epochs: int = 20
    lr: float = 1e-4
    batch_size: int = 8
    lambda_l2: float = 1e-5
    lambda_anatomy: float = 0.1
    image_size: int = 128
    # network input is (value - offset) / scale
    offset: float = -300.0
    scale: float = 700.0
    seed: int = 0
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError(f"unknown lr_schedule {self.lr_schedule!r}")
        for name in ("latent_dim", "epochs", "lr", "batch_size", "image_size", "scale"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"codec config field {name} must be positive")
        if self.lambda_l2 < 0 or self.lambda_anatomy < 0:
            raise ValidationError("loss weights must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def sobel_magnitude(x: torch.Tensor) -> torch.Tensor:
    """Sobel gradient magnitude of a ``[N, 1, H, W]`` batch (replicate padding)."""
    k = torch.stack([SOBEL_X, SOBEL_X.T])[:, None]
    g = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k)
    return torch.sqrt(g[:, :1] ** 2 + g[:, 1:] ** 2 + 1e-12)


def anatomy_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (sobel_magnitude(recon) - sobel_magnitude(target)).abs().mean()


def l2_penalty(modules) -> torch.Tensor:
    return sum((p * p).sum() for m in modules for p in m.parameters())


def codec_loss(enc: Encoder, dec: Decoder, x: torch.Tensor, cfg: CodecConfig):
    """Returns (total, recon_mse, anatomy) for a normalized batch."""
    recon = dec(enc(x))
    mse = ((recon - x) ** 2).mean()
    anat = anatomy_loss(recon, x) if cfg.lambda_anatomy > 0 else torch.zeros(())
    total = mse + cfg.lambda_anatomy * anat + cfg.lambda_l2 * l2_penalty((enc, dec))
    return total, mse, anat


def scheduled_lr(base: float, schedule: str, step: int, total: int) -> float:
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))
    return base


class Codec:
    """Frozen encoder/decoder pair with the normalization it was trained with."""

    def __init__(self, enc: Encoder, dec: Decoder, offset: float, scale: float):
        self.enc, self.dec = enc.eval(), dec.eval()
        self.offset, self.scale = offset, scale
        for p in list(enc.parameters()) + list(dec.parameters()):
            p.requires_grad_(False)

    @property
    def latent_dim(self) -> int:
        return self.enc.latent_dim

    @property
    def image_size(self) -> int:
        return self.enc.image_size

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Codec":
        for key in ("meta.image_size", "meta.latent_dim", "meta.offset", "meta.scale"):
            if key not in ckpt:
                raise ValidationError(f"codec checkpoint lacks {key}")
        size = int(ckpt["meta.image_size"].data[0])
        latent = int(ckpt["meta.latent_dim"].data[0])
        enc, dec = Encoder(size, latent), Decoder(size, latent)
        load_params(enc, ckpt, "enc")
        load_params(dec, ckpt, "dec")
        return cls(enc, dec, float(ckpt["meta.offset"].data[0]), float(ckpt["meta.scale"].data[0]))

    def encode(self, img) -> np.ndarray:
        """Latent for one ``[H, W]`` image or a ``[N, H, W]`` batch."""
        x = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float32)
        single = x.ndim == 2
        xb = x[None] if single else x
        if xb.ndim != 3 or xb.shape[1:] != (self.image_size, self.image_size):
            raise ShapeError(f"expected {self.image_size}x{self.image_size} input, got {x.shape}")
        xn = torch.from_numpy(((xb - self.offset) / self.scale).astype(np.float32))[:, None]
        with torch.no_grad():
            z = torch.cat([self.enc(xn[i:i + 32]) for i in range(0, len(xn), 32)]).numpy()
        return z[0] if single else z

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        single = z.ndim == 1
        zb = z[None] if single else z
        if zb.ndim != 2 or zb.shape[1] != self.latent_dim:
            raise ShapeError(f"expected latent length {self.latent_dim}, got {z.shape}")
        with torch.no_grad():
            y = torch.cat([self.dec(torch.from_numpy(zb[i:i + 32])) for i in range(0, len(zb), 32)])
        out = (y[:, 0].numpy().astype(np.float64) * self.scale + self.offset).astype(np.float32)
        return out[0] if single else out


def _meta_entries(cfg: CodecConfig) -> dict[str, ImageTensor]:
    def scalar(v):
        return ImageTensor(np.array([v], dtype=np.float32), Unit.DIMENSIONLESS)

    return {
        "meta.image_size": scalar(cfg.image_size),
        "meta.latent_dim": scalar(cfg.latent_dim),
        "meta.offset": scalar(cfg.offset),
        "meta.scale": scalar(cfg.scale),
    }


def train_codec(
    images: Sequence[np.ndarray],
    cfg: CodecConfig = CodecConfig(),
    log_rows: Optional[list] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> Checkpoint:
    """Fit encoder and decoder to reconstruct ``images``; returns the frozen checkpoint.

    ``log_rows``, when given, receives one ``(step, recon_mse, anatomy_loss, total)``
    tuple per optimizer step.
    """
    if len(images) == 0:
        raise ValidationError("codec training needs at least one image")
    data = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    if data.shape[1:] != (cfg.image_size, cfg.image_size):
        raise ShapeError(f"images must be {cfg.image_size}x{cfg.image_size}, got {data.shape[1:]}")
    data = torch.from_numpy(((data - cfg.offset) / cfg.scale).astype(np.float32))[:, None]

    torch.manual_seed(cfg.seed)
    enc, dec = Encoder(cfg.image_size, cfg.latent_dim), Decoder(cfg.image_size, cfg.latent_dim)
    init_uniform_fan_in(enc, cfg.seed)
    init_uniform_fan_in(dec, cfg.seed + 1)
    opt = Adam([(f"enc.{n}", p) for n, p in enc.named_parameters()]
               + [(f"dec.{n}", p) for n, p in dec.named_parameters()], lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    steps_per_epoch = -(-len(data) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        for i in range(0, len(order), cfg.batch_size):
            opt.lr = scheduled_lr(cfg.lr, cfg.lr_schedule, step, total_steps)
            batch = data[order[i:i + cfg.batch_size]]
            total, mse, anat = codec_loss(enc, dec, batch, cfg)
            if not torch.isfinite(total):
                raise TrainingError(f"codec loss became non-finite at step {step}")
            opt.zero_grad()
            total.backward()
            opt.step()
            step += 1
            if log_rows is not None:
                log_rows.append((step, mse.item(), anat.item(), total.item()))
            if on_step is not None:
                on_step(step, total.item())
        log.info("codec epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, total.item())

    entries = params_to_entries(enc, "enc")
    entries.update(params_to_entries(dec, "dec"))
    entries.update(_meta_entries(cfg))
    return Checkpoint(entries)


def encode(ckpt: Checkpoint, img) -> np.ndarray:
    return Codec.from_checkpoint(ckpt).encode(img)


def decode(ckpt: Checkpoint, z) -> np.ndarray:
    return Codec.from_checkpoint(ckpt).decode(z)


def write_loss_csv(rows, path, header=("step", "recon_mse", "anatomy_loss", "total")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def config_dict(cfg: CodecConfig) -> dict:
    return asdict(cfg)
