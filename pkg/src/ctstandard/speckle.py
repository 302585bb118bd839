"""Speckle contrast, blood-flow index and the patch-based denoising study.

The study simulates gated speckle frames of the U/K flow phantom, turns the
gate-averaged frame into a flow estimate through the local speckle contrast,
and trains the codec + latent diffusion pipeline on patches from the left
half of the frame to map that estimate onto the true flow. The right half is
held out for scoring.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import codec as codec_mod
from . import diffusion as diff_mod
from .dataio import ImageTensor, Unit, WindowLevel, render_png
from .errors import ShapeError, ValidationError
from .evaluation import image_ccc, psnr, ssim, write_json
from .phantom import gen_uk_phantom, simulate_gated_speckle

log = logging.getLogger(__name__)

WINDOW = 3
K_FLOOR = 1e-3


def _frame(x, ndim: int = 2) -> np.ndarray:
    a = x.data if isinstance(x, ImageTensor) else np.asarray(x)
    if a.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D array, got shape {a.shape}")
    if np.any(a < 0):
        raise ValidationError("intensities must be non-negative")
    return a.astype(np.float64)


def speckle_contrast(frame) -> np.ndarray:
    """Local std / mean over a 3x3 window (population std, shrunken at the border)."""
    a = _frame(frame)
    h, w = a.shape
    r = WINDOW // 2
    padded = np.pad(a, r, constant_values=np.nan)
    win = np.stack([padded[dy:dy + h, dx:dx + w] for dy in range(WINDOW) for dx in range(WINDOW)])
    mean = np.nanmean(win, axis=0)
    std = np.sqrt(np.nanmean((win - mean) ** 2, axis=0))
    k = np.zeros_like(mean)
    np.divide(std, mean, out=k, where=mean > 0)
    return k


def bfi(k_s, k_floor: float = K_FLOOR) -> np.ndarray:
    """Blood-flow index ``1 / max(K_s, k_floor)**2``."""
    k = k_s.data if isinstance(k_s, ImageTensor) else np.asarray(k_s, dtype=np.float64)
    return 1.0 / np.maximum(k, k_floor) ** 2


def gate_average(stack, n: int) -> np.ndarray:
    """Mean of the first ``n`` gated frames."""
    s = _frame(stack, 3)
    if not 1 <= n <= len(s):
        raise ValidationError(f"n must lie in [1, {len(s)}], got {n}")
    return s[:n].mean(axis=0)


def extract_patches(img: np.ndarray, size: int, stride: int, x0: int = 0, x1: Optional[int] = None):
    """All ``size x size`` patches lying wholly in columns ``[x0, x1)``.

    Returns ``(patches [N, size, size], corners [N, 2])`` in row-major order.
    """
    h, w = img.shape
    x1 = w if x1 is None else x1
    if size < 1 or stride < 1 or not 0 <= x0 < x1 <= w:
        raise ValidationError("invalid patch geometry")
    ys = range(0, h - size + 1, stride)
    xs = range(x0, x1 - size + 1, stride)
    corners = np.array([(y, x) for y in ys for x in xs], dtype=np.int64).reshape(-1, 2)
    patches = np.stack([img[y:y + size, x:x + size] for y, x in corners]) if len(corners) else \
        np.zeros((0, size, size), img.dtype)
    return patches, corners


def stitch_patches(patches: np.ndarray, corners: np.ndarray, shape) -> np.ndarray:
    """Average overlapping patches back into an image; uncovered pixels are NaN."""
    acc = np.zeros(shape)
    cnt = np.zeros(shape)
    size = patches.shape[-1]
    for p, (y, x) in zip(patches, corners):
        acc[y:y + size, x:x + size] += p
        cnt[y:y + size, x:x + size] += 1
    out = np.full(shape, np.nan)
    np.divide(acc, cnt, out=out, where=cnt > 0)
    return out


def _codec_defaults() -> dict:
    return {"latent_dim": 128, "epochs": 6, "lr": 1e-3, "batch_size": 32, "lambda_anatomy": 0.1,
            "image_size": 32, "offset": 0.5, "scale": 0.5, "lr_schedule": "cosine"}


def _diffusion_defaults() -> dict:
    return {"epochs": 10, "lr": 1e-3, "batch_size": 64, "lr_schedule": "cosine"}


@dataclass
class StudyConfig:
    size: int = 192
    gates: int = 10
    depth_blur: float = 1.5
    speckle_shape: float = 1.0
    flow_gain: float = 4.0
    read_noise: float = 0.02
    # perfusion level of the tissue around the vessels, relative to vessel flow 1
    background_flow: float = 0.2
    patch: int = 32
    train_stride: int = 1
    test_stride: int = 8
    seed: int = 0
    codec: dict = field(default_factory=_codec_defaults)
    diffusion: dict = field(default_factory=_diffusion_defaults)

    def __post_init__(self):
        if self.size % 2 or self.size // 2 < self.patch:
            raise ValidationError("size must be even with each half at least one patch wide")
        if self.gates < 1 or self.train_stride < 1 or self.test_stride < 1:
            raise ValidationError("gates and strides must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k not in ("codec", "diffusion")})
        cfg.codec.update(d.get("codec", {}))
        cfg.diffusion.update(d.get("diffusion", {}))
        return cfg


@dataclass
class StudyReport:
    ssim_in: float
    ssim_out: float
    psnr_in: float
    psnr_out: float
    ccc_in: float
    ccc_out: float
    n_train_patches: int = 0
    n_test_patches: int = 0

    def improvements(self) -> dict[str, bool]:
        return {m: getattr(self, f"{m}_out") > getattr(self, f"{m}_in") for m in ("ssim", "psnr", "ccc")}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["improved"] = self.improvements()
        return d


def flow_estimate(stack, n: int, speckle_shape: float, flow_gain: float) -> np.ndarray:
    """Invert the decorrelation model: BFI of the n-gate mean is about ``n * shape * (1 + gain * flow)``."""
    if flow_gain <= 0:
        raise ValidationError("flow_gain must be positive to invert the speckle model")
    b = bfi(speckle_contrast(gate_average(stack, n)))
    return np.clip((b / (n * speckle_shape) - 1.0) / flow_gain, 0.0, 1.0)


def simulate_study_inputs(cfg: StudyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth flow map and its noisy speckle-derived estimate."""
    uk = gen_uk_phantom(cfg.size).astype(np.float64)
    truth = cfg.background_flow + (1.0 - cfg.background_flow) * uk
    stack = simulate_gated_speckle(truth, cfg.gates, cfg.depth_blur, cfg.seed,
                                   cfg.speckle_shape, cfg.read_noise, cfg.flow_gain)
    noisy = flow_estimate(stack, cfg.gates, cfg.speckle_shape, cfg.flow_gain)
    return truth.astype(np.float32), noisy.astype(np.float32)


def run_denoise_study(cfg: StudyConfig = StudyConfig(), out_dir=None) -> StudyReport:
    truth, noisy = simulate_study_inputs(cfg)
    half = cfg.size // 2
    xa, corners_tr = extract_patches(noisy, cfg.patch, cfg.train_stride, 0, half)
    xb, _ = extract_patches(truth, cfg.patch, cfg.train_stride, 0, half)
    log.info("speckle study: %d training patches", len(xa))

    ccfg = codec_mod.CodecConfig.from_dict({**cfg.codec, "image_size": cfg.patch, "seed": cfg.seed})
    codec_ckpt = codec_mod.train_codec(np.concatenate([xa, xb]), ccfg)
    dcfg = diff_mod.DiffusionConfig.from_dict({**cfg.diffusion, "seed": cfg.seed})
    diff_ckpt = diff_mod.train_diffusion(codec_ckpt, list(zip(xa, xb)), dcfg)

    ta, corners_te = extract_patches(noisy, cfg.patch, cfg.test_stride, half, cfg.size)
    codec = codec_mod.Codec.from_checkpoint(codec_ckpt)
    model = diff_mod.LatentDiffusion.from_checkpoint(diff_ckpt)
    den = codec.decode(model.sample(codec.encode(ta), cfg.seed))
    out = stitch_patches(den, corners_te, truth.shape)[:, half:]

    t_r, n_r = truth[:, half:].astype(np.float64), noisy[:, half:].astype(np.float64)
    report = StudyReport(
        ssim_in=ssim(n_r, t_r), ssim_out=ssim(out, t_r),
        psnr_in=psnr(n_r, t_r), psnr_out=psnr(out, t_r),
        ccc_in=image_ccc(n_r, t_r), ccc_out=image_ccc(out, t_r),
        n_train_patches=len(xa), n_test_patches=len(ta),
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_json(report.to_dict(), os.path.join(out_dir, "study_report.json"))
        unit = WindowLevel(0.0, 1.0)
        for name, img in (("truth", t_r), ("input", n_r), ("denoised", out)):
            render_png(ImageTensor(img.astype(np.float32), Unit.NORMALIZED), unit,
                       os.path.join(out_dir, f"{name}.png"))
    return report
