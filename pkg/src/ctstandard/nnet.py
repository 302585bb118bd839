"""Encoder, decoder and latent denoiser networks plus the Adam optimizer.

Networks are ordinary ``torch.nn.Module`` objects; reverse-mode gradients
come from autograd. Parameters are exchanged with checkpoints under the
``enc.``, ``dec.`` and ``den.`` name prefixes.
"""

from __future__ import annotations

import hashlib
import math
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .dataio import Checkpoint, ImageTensor, Unit
from .errors import ShapeError, TrainingError, ValidationError

LEAK = 0.01
ENCODER_WIDTHS = (16, 32, 64, 128, 256)
DECODER_WIDTHS = (128, 64, 32, 16, 16)
TIME_EMBED_DIM = 64

torch.use_deterministic_algorithms(True)


def _act(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, LEAK)


def init_uniform_fan_in(module: nn.Module, seed: int) -> None:
    """Seeded He-uniform weights, zero biases."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
                continue
            fan_in = p[0].numel() if p.dim() > 1 else p.numel()
            bound = math.sqrt(6.0 / ((1 + LEAK ** 2) * fan_in))
            p.uniform_(-bound, bound, generator=gen)


class Encoder(nn.Module):
    """Five stride-2 conv blocks followed by a dense projection to the latent."""

    def __init__(self, image_size: int = 128, latent_dim: int = 128, widths: Sequence[int] = ENCODER_WIDTHS):
        super().__init__()
        n_down = len(widths)
        if image_size % (2 ** n_down):
            raise ValidationError(f"image size must be divisible by {2 ** n_down}, got {image_size}")
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.blocks = nn.ModuleList()
        c = 1
        for w in widths:
            self.blocks.append(nn.ModuleDict({
                "conv1": nn.Conv2d(c, w, 3, padding=1),
                "conv2": nn.Conv2d(w, w, 3, stride=2, padding=1),
            }))
            c = w
        grid = image_size // 2 ** n_down
        self.head = nn.Linear(c * grid * grid, latent_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for b in self.blocks:
            x = _act(b["conv1"](x))
            x = _act(b["conv2"](x))
        return self.head(x.flatten(1))


class Decoder(nn.Module):
    """Dense layer to a coarse grid, five nearest-neighbour up-blocks, 1x1 conv head.

    There are no skip connections from the encoder.
    """

    def __init__(self, image_size: int = 128, latent_dim: int = 128, widths: Sequence[int] = DECODER_WIDTHS,
                 grid_channels: int = 256):
        super().__init__()
        n_up = len(widths)
        if image_size % (2 ** n_up):
            raise ValidationError(f"image size must be divisible by {2 ** n_up}, got {image_size}")
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.grid = image_size // 2 ** n_up
        self.grid_channels = grid_channels
        self.fc = nn.Linear(latent_dim, grid_channels * self.grid * self.grid)
        self.blocks = nn.ModuleList()
        c = grid_channels
        for w in widths:
            self.blocks.append(nn.ModuleDict({
                "conv1": nn.Conv2d(c, w, 3, padding=1),
                "conv2": nn.Conv2d(w, w, 3, padding=1),
            }))
            c = w
        self.head1 = nn.Conv2d(c, c, 1)
        self.head2 = nn.Conv2d(c, 1, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = _act(self.fc(z)).view(-1, self.grid_channels, self.grid, self.grid)
        for b in self.blocks:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = _act(b["conv1"](x))
            x = _act(b["conv2"](x))
        return self.head2(_act(self.head1(x)))


def timestep_embedding(t: torch.Tensor, dim: int = TIME_EMBED_DIM) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class Denoiser(nn.Module):
    """1-D U-Net predicting the noise in a corrupted latent.

    The noisy latent and the conditioning latent are stacked as two input
    channels so that coordinate ``i`` of both lines up. The step embedding is
    added after the first convolution; a dense layer at the bottleneck mixes
    information across all coordinates.
    """

    def __init__(self, latent_dim: int = 128, n_steps: int = 200, widths: Sequence[int] = (32, 64, 128)):
        super().__init__()
        if latent_dim % (2 ** len(widths)):
            raise ValidationError(f"latent_dim must be divisible by {2 ** len(widths)}")
        self.latent_dim = latent_dim
        self.n_steps = n_steps
        c0 = widths[0]
        self.inp = nn.Conv1d(2, c0, 3, padding=1)
        self.t1 = nn.Linear(TIME_EMBED_DIM, TIME_EMBED_DIM)
        self.t2 = nn.Linear(TIME_EMBED_DIM, c0)
        self.down = nn.ModuleList()
        c = c0
        for w in widths:
            self.down.append(nn.ModuleDict({
                "conv1": nn.Conv1d(c, w, 3, padding=1),
                "conv2": nn.Conv1d(w, w, 3, stride=2, padding=1),
            }))
            c = w
        lb = latent_dim // 2 ** len(widths)
        self.mid = nn.Linear(c * lb, c * lb)
        self.up = nn.ModuleList()
        skips = [c0] + list(widths[:-1])
        for skip_c in reversed(skips):
            self.up.append(nn.ModuleDict({
                "conv1": nn.Conv1d(c + skip_c, skip_c, 3, padding=1),
                "conv2": nn.Conv1d(skip_c, skip_c, 3, padding=1),
            }))
            c = skip_c
        self.out = nn.Conv1d(c, 1, 1)

    def zero_output_layer(self) -> None:
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()

    def forward(self, z_noisy: torch.Tensor, z_cond: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        x = torch.stack([z_noisy, z_cond], dim=1)
        temb = self.t2(_act(self.t1(timestep_embedding(t).to(self.t1.weight.dtype))))
        h = _act(self.inp(x) + temb[:, :, None])
        skips = []
        for b in self.down:
            skips.append(h)
            h = _act(b["conv1"](h))
            h = _act(b["conv2"](h))
        shape = h.shape
        h = h + _act(self.mid(h.flatten(1))).view(shape)
        for b in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = torch.cat([h, skips.pop()], dim=1)
            h = _act(b["conv1"](h))
            h = _act(b["conv2"](h))
        return self.out(h)[:, 0]


# -- forward wrappers on numpy inputs ----------------------------------------


def _image_batch(net: nn.Module, img) -> torch.Tensor:
    x = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float32)
    if x.ndim == 2:
        x = x[None]
    size = net.image_size
    if x.ndim != 3 or x.shape[-2:] != (size, size):
        raise ShapeError(f"expected image(s) of shape ({size}, {size}), got {x.shape}")
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))[:, None]


def forward_encoder(net: Encoder, img) -> np.ndarray:
    """Latent vector(s) for one image ``[H, W]`` or a batch ``[N, H, W]``."""
    x = _image_batch(net, img)
    with torch.no_grad():
        z = net(x).numpy()
    return z[0] if np.ndim(img.data if isinstance(img, ImageTensor) else img) == 2 else z


def forward_decoder(net: Decoder, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.ndim != 2 or zb.shape[1] != net.latent_dim:
        raise ShapeError(f"expected latent(s) of length {net.latent_dim}, got {z.shape}")
    with torch.no_grad():
        out = net(torch.from_numpy(zb))[:, 0].numpy()
    return out[0] if single else out


def forward_denoiser(net: Denoiser, z_noisy, z_cond, t) -> np.ndarray:
    zn = np.asarray(z_noisy, dtype=np.float32)
    zc = np.asarray(z_cond, dtype=np.float32)
    single = zn.ndim == 1
    if zn.shape != zc.shape or zn.shape[-1] != net.latent_dim:
        raise ShapeError(f"latents must both have length {net.latent_dim}")
    tt = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if tt.min() < 1 or tt.max() > net.n_steps:
        raise ValidationError(f"step index must lie in [1, {net.n_steps}], got {t}")
    if single:
        zn, zc = zn[None], zc[None]
    if len(tt) == 1:
        tt = np.repeat(tt, len(zn))
    with torch.no_grad():
        out = net(torch.from_numpy(zn), torch.from_numpy(zc), torch.from_numpy(tt)).numpy()
    return out[0] if single else out


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a fixed, named parameter list."""

    def __init__(self, named_params: Iterable[tuple[str, torch.nn.Parameter]], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: torch.zeros_like(p) for n, p in self.params}
        self.v = {n: torch.zeros_like(p) for n, p in self.params}
        self.step_count = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = {}
        for n, p in self.params:
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            if not torch.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {n}")
            grads[n] = g
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        with torch.no_grad():
            for n, p in self.params:
                g = grads[n]
                self.m[n].mul_(b1).add_(g, alpha=1 - b1)
                self.v[n].mul_(b2).addcmul_(g, g, value=1 - b2)
                p.sub_(self.lr * (self.m[n] / c1) / (torch.sqrt(self.v[n] / c2) + self.eps))


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Functional form of one Adam update; ``state`` holds ``m``, ``v`` and ``step``."""
    for n, g in grads.items():
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {n}")
    state.setdefault("m", {n: torch.zeros_like(p) for n, p in params.items()})
    state.setdefault("v", {n: torch.zeros_like(p) for n, p in params.items()})
    state["step"] = state.get("step", 0) + 1
    c1 = 1.0 - beta1 ** state["step"]
    c2 = 1.0 - beta2 ** state["step"]
    with torch.no_grad():
        for n, p in params.items():
            g = grads[n]
            m, v = state["m"][n], state["v"][n]
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))


# -- parameter exchange -------------------------------------------------------


def params_to_entries(net: nn.Module, prefix: str) -> dict[str, ImageTensor]:
    return {
        f"{prefix}.{name}": ImageTensor(p.detach().cpu().numpy(), Unit.DIMENSIONLESS)
        for name, p in net.named_parameters()
    }


def load_params(net: nn.Module, ckpt: Checkpoint, prefix: str) -> None:
    state = {}
    for name, p in net.named_parameters():
        key = f"{prefix}.{name}"
        if key not in ckpt:
            raise ValidationError(f"checkpoint lacks parameter {key}")
        arr = ckpt[key].data
        if arr.shape != tuple(p.shape):
            raise ShapeError(f"parameter {key} has shape {arr.shape}, expected {tuple(p.shape)}")
        state[name] = torch.from_numpy(arr.copy())
    net.load_state_dict(state, strict=True)


def params_digest(entries: dict[str, ImageTensor] | Checkpoint, prefixes: Sequence[str] = ("enc.", "dec.")) -> str:
    """SHA-256 over names and raw bytes of matching entries, in order."""
    if isinstance(entries, Checkpoint):
        entries = entries.entries
    h = hashlib.sha256()
    for name, t in entries.items():
        if name.startswith(tuple(prefixes)):
            h.update(name.encode())
            h.update(t.data.tobytes())
    return h.hexdigest()


def module_digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
