"""Synthetic paired CT phantoms and the gated-speckle flow phantom.

Kernel differences are emulated with radially symmetric MTF filters applied
in the Fourier domain rather than by simulating projections; the pipeline
downstream only sees image pairs that share anatomy and differ in texture.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .dataio import ImageTensor, Unit, save_tensor
from .errors import ShapeError, ValidationError

AIR_HU = -1000.0
BODY_HU = 50.0
LUNG_HU = -850.0
TUMOR_HU = 20.0
MIN_ROI_PIXELS = 16


@dataclass
class KernelSpec:
    """Reconstruction-kernel emulation parameters.

    ``cutoff`` is in cycles/pixel. For a smooth kernel it is the frequency
    where the Gaussian MTF falls to one half; for a sharp kernel it bounds
    the band in which the MTF is lifted by ``boost``. ``noise_hu`` is the
    standard deviation of the injected correlated noise.
    """

    name: str
    mtf_shape: str
    cutoff: float
    boost: float = 0.0
    noise_hu: float = 0.0

    def __post_init__(self):
        if self.mtf_shape not in ("smooth", "sharp"):
            raise ValidationError(f"mtf_shape must be 'smooth' or 'sharp', got {self.mtf_shape!r}")
        if not 0.0 < self.cutoff <= 0.5:
            raise ValidationError(f"cutoff must lie in (0, 0.5], got {self.cutoff}")
        if self.boost < 0 or self.noise_hu < 0:
            raise ValidationError("boost and noise_hu must be non-negative")


# Br40-like smooth kernel is treated as non-standard, Bl64-like sharp as standard.
SMOOTH_KERNEL = KernelSpec("Br40", "smooth", cutoff=0.08, noise_hu=2.0)
SHARP_KERNEL = KernelSpec("Bl64", "sharp", cutoff=0.45, boost=0.5, noise_hu=3.0)


@dataclass
class PairedSample:
    a: np.ndarray
    b: np.ndarray
    tumor_rois: list[np.ndarray] = field(default_factory=list)
    base: Optional[np.ndarray] = None
    sample_id: str = ""

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise ShapeError(f"pair shapes differ: {self.a.shape} vs {self.b.shape}")


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return u * u + v * v <= 1.0


class _Field:
    """Unit-variance 3-D random field as a sum of plane waves.

    Evaluated on a 128-pixel reference grid (scaled for other sizes) at slice
    height ``z`` in [0, 1).
    """

    def __init__(self, rng: np.random.Generator, n_modes: int, freq: tuple[float, float], z_freq: float):
        mag = rng.uniform(*freq, n_modes)
        theta = rng.uniform(0, 2 * np.pi, n_modes)
        self.ky, self.kx = mag * np.sin(theta), mag * np.cos(theta)
        self.kz = rng.uniform(-z_freq, z_freq, n_modes)
        self.phase = rng.uniform(0, 2 * np.pi, n_modes)

    def __call__(self, yy, xx, z, size) -> np.ndarray:
        s = 128.0 / size
        out = np.zeros_like(yy)
        for ky, kx, kz, ph in zip(self.ky, self.kx, self.kz, self.phase):
            out += np.cos(2 * np.pi * (ky * yy * s + kx * xx * s + kz * z) + ph)
        return out * np.sqrt(2.0 / len(self.ky))


class _ChestVolume:
    """Fixed procedural chest phantom; every slice of it shares one anatomy plan."""

    MAX_TUMORS = 6
    N_VESSELS = 14
    LUNG_FINE_HU = 15.0
    LUNG_COARSE_HU = 20.0
    TUMOR_TEXTURE_HU = 45.0
    # Gaussian system PSF (pixels at 128 px) applied before any kernel
    PSF_SIGMA = 1.2
    # lung side (-1 right of image centre line, +1 left) and position inside the
    # lung in units of the lung semi-axes; slots are far enough apart to stay disjoint
    TUMOR_SLOTS = ((-1, -0.35, 0.05), (1, 0.40, -0.05), (-1, 0.45, 0.10),
                   (1, -0.40, 0.0), (-1, 0.0, -0.30), (1, 0.0, 0.35))

    def __init__(self, seed: int = 1729):
        rng = np.random.default_rng(seed)
        self.body_phase = rng.uniform(0, 2 * np.pi, 2)
        self.lung_phase = rng.uniform(0, 2 * np.pi, 2)
        self.tumor_phase = rng.uniform(0, 2 * np.pi, self.MAX_TUMORS)
        self.tumor_drift = rng.uniform(-0.08, 0.08, (self.MAX_TUMORS, 2))
        self.tumor_radius = rng.uniform(0.050, 0.060, self.MAX_TUMORS)
        n_vessels = self.N_VESSELS
        self.vessel_pos = rng.uniform(-0.8, 0.8, (n_vessels, 2))
        self.vessel_side = rng.choice([-1, 1], n_vessels)
        self.vessel_drift = rng.uniform(-0.3, 0.3, (n_vessels, 2))
        self.vessel_radius = rng.uniform(0.7, 1.6, n_vessels)
        self.vessel_hu = rng.uniform(-150, 40, n_vessels)
        self.body_tex = _Field(rng, 24, (0.01, 0.05), 0.5)
        self.lung_fine = _Field(rng, 48, (0.05, 0.12), 1.0)
        self.lung_coarse = _Field(rng, 24, (0.015, 0.04), 0.5)
        self.tumor_tex = _Field(rng, 32, (0.03, 0.08), 1.0)

    def slice(self, z: float, size: int, n_tumors: int):
        yy, xx = _grid(size)
        u = size / 128.0
        c = size / 2.0
        img = np.full((size, size), AIR_HU)

        body_ry = size * (0.33 + 0.015 * np.sin(2 * np.pi * z + self.body_phase[0]))
        body_rx = size * (0.44 + 0.010 * np.sin(2 * np.pi * z + self.body_phase[1]))
        body = _ellipse(yy, xx, c, c, body_ry, body_rx)
        img[body] = BODY_HU + 8.0 * self.body_tex(yy, xx, z, size)[body]

        lung_ry = body_ry * (0.66 + 0.10 * z + 0.02 * np.sin(2 * np.pi * z + self.lung_phase[0]))
        lung_rx = body_rx * (0.34 + 0.02 * np.sin(2 * np.pi * z + self.lung_phase[1]))
        lung_cy = c - 0.04 * size
        lung_cx = {side: c + side * body_rx * 0.48 for side in (-1, 1)}
        lungs = np.zeros_like(body)
        for side in (-1, 1):
            lungs |= _ellipse(yy, xx, lung_cy, lung_cx[side], lung_ry, lung_rx, angle=side * 0.12) & body
        tex = (self.LUNG_FINE_HU * self.lung_fine(yy, xx, z, size)
               + self.LUNG_COARSE_HU * self.lung_coarse(yy, xx, z, size))
        img[lungs] = LUNG_HU + tex[lungs]

        for k in range(len(self.vessel_pos)):
            side = self.vessel_side[k]
            py, px = self.vessel_pos[k] + self.vessel_drift[k] * z
            cy = lung_cy + py * lung_ry * 0.9
            cx = lung_cx[side] + px * lung_rx * 0.9
            r = self.vessel_radius[k] * u
            img[_ellipse(yy, xx, cy, cx, r, r) & lungs] = self.vessel_hu[k]

        spine = _ellipse(yy, xx, c + body_ry * 0.78, c, 0.05 * size, 0.05 * size) & body
        img[spine] = 700.0 + 30.0 * self.body_tex(yy, xx, z + 0.5, size)[spine]

        masks = []
        tumor_tex = self.TUMOR_TEXTURE_HU * self.tumor_tex(yy, xx, z, size)
        for k in range(n_tumors):
            side, sy, sx = self.TUMOR_SLOTS[k]
            dy, dx = self.tumor_drift[k] * z
            cy = lung_cy + (sy + dy) * lung_ry
            cx = lung_cx[side] + (sx + dx) * lung_rx
            r = size * self.tumor_radius[k] * (0.85 + 0.15 * np.sin(2 * np.pi * z + self.tumor_phase[k]))
            mask = _ellipse(yy, xx, cy, cx, 0.85 * r, r, angle=self.tumor_phase[k])
            img[mask] = TUMOR_HU + tumor_tex[mask]
            masks.append(mask)
        if self.PSF_SIGMA > 0:
            img = ndimage.gaussian_filter(img, self.PSF_SIGMA * u, mode="nearest")
        return img.astype(np.float32), masks


_VOLUME = _ChestVolume()


def gen_ct_phantom(seed: int, size: int = 128, n_tumors: int = 3) -> tuple[np.ndarray, list[np.ndarray]]:
    """One axial slice (HU) through the fixed chest phantom, and its tumor masks.

    The seed selects the slice height, so different seeds give different
    but anatomically related slices, as when one physical phantom is scanned
    many times.
    """
    if size < 64:
        raise ValidationError(f"phantom size must be at least 64, got {size}")
    if not 0 <= n_tumors <= _ChestVolume.MAX_TUMORS:
        raise ValidationError(f"n_tumors must lie in [0, {_ChestVolume.MAX_TUMORS}], got {n_tumors}")
    z = float(np.random.default_rng(seed).uniform(0.0, 1.0))
    return _VOLUME.slice(z, size, n_tumors)


def _freq_radius(shape) -> np.ndarray:
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.sqrt(fy * fy + fx * fx)


def kernel_mtf(k: KernelSpec, shape) -> np.ndarray:
    """Radially symmetric transfer function with unit response at DC."""
    f = _freq_radius(shape)
    if k.mtf_shape == "smooth":
        return np.exp(-np.log(2.0) * (f / k.cutoff) ** 2)
    band = np.where(f < k.cutoff, np.sin(np.pi * f / k.cutoff) ** 2, 0.0)
    return 1.0 + k.boost * band


def kernel_noise(k: KernelSpec, shape, seed: int) -> np.ndarray:
    """Zero-mean correlated noise with a ramp-times-MTF power spectrum."""
    if k.noise_hu == 0:
        return np.zeros(shape)
    rng = np.random.default_rng(seed)
    f = _freq_radius(shape)
    amp = np.sqrt(f) * kernel_mtf(k, shape)
    n = np.real(np.fft.ifft2(np.fft.fft2(rng.standard_normal(shape)) * amp))
    n -= n.mean()
    return n * (k.noise_hu / (n.std() + 1e-12))


def apply_kernel(img, k: KernelSpec, noise_seed: int) -> np.ndarray:
    """Filter a 2-D HU image with the kernel MTF and add its noise."""
    x = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    if x.ndim != 2:
        raise ShapeError(f"apply_kernel needs a 2-D image, got shape {x.shape}")
    x = x.astype(np.float64)
    out = np.real(np.fft.ifft2(np.fft.fft2(x) * kernel_mtf(k, x.shape)))
    out += kernel_noise(k, x.shape, noise_seed)
    return out.astype(np.float32)


def gen_paired_dataset(
    seed: int,
    n: int,
    size: int = 128,
    n_tumors: int = 3,
    standard: KernelSpec = SHARP_KERNEL,
    nonstandard: KernelSpec = SMOOTH_KERNEL,
) -> list[PairedSample]:
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for i, child in enumerate(children):
        phantom_seed, noise_a, noise_b = (int(s) for s in child.generate_state(3))
        base, masks = gen_ct_phantom(phantom_seed, size, n_tumors)
        out.append(PairedSample(
            a=apply_kernel(base, nonstandard, noise_a),
            b=apply_kernel(base, standard, noise_b),
            tumor_rois=masks,
            base=base,
            sample_id=f"s{i:04d}",
        ))
    return out


def write_dataset(samples: list[PairedSample], out_dir) -> str:
    """Store samples as CTTN files plus ``manifest.json``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for s in samples:
        path_a, path_b = f"{s.sample_id}_a.cttn", f"{s.sample_id}_b.cttn"
        save_tensor(ImageTensor(s.a, Unit.HU), os.path.join(out_dir, path_a))
        save_tensor(ImageTensor(s.b, Unit.HU), os.path.join(out_dir, path_b))
        roi_paths = []
        for j, m in enumerate(s.tumor_rois):
            p = f"{s.sample_id}_roi{j}.cttn"
            save_tensor(ImageTensor(m.astype(np.float32), Unit.DIMENSIONLESS), os.path.join(out_dir, p))
            roi_paths.append(p)
        manifest.append({"id": s.sample_id, "path_a": path_a, "path_b": path_b, "roi_paths": roi_paths})
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def read_dataset(data_dir) -> list[PairedSample]:
    from .dataio import load_tensor

    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    out = []
    for entry in manifest:
        a = load_tensor(os.path.join(data_dir, entry["path_a"])).data
        b = load_tensor(os.path.join(data_dir, entry["path_b"])).data
        rois = [load_tensor(os.path.join(data_dir, p)).data > 0.5 for p in entry["roi_paths"]]
        out.append(PairedSample(a=a, b=b, tumor_rois=rois, sample_id=entry["id"]))
    return out


# -- flow phantom -------------------------------------------------------------


def _stroke(yy, xx, p0, p1, width) -> np.ndarray:
    """Pixels within width/2 of the segment p0-p1 (points as (y, x))."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / (d @ d)
    t = np.clip(t, 0.0, 1.0)
    py, px = p0[0] + t * d[0], p0[1] + t * d[1]
    return (yy - py) ** 2 + (xx - px) ** 2 <= (width / 2.0) ** 2


def gen_uk_phantom(size: int = 192) -> np.ndarray:
    """Binary flow map with the letters 'U' and 'K' drawn as channels.

    The letters sit side by side, 'U' in the left half of the frame and 'K'
    in the right half.
    """
    if size < 32:
        raise ValidationError(f"flow phantom size must be at least 32, got {size}")
    yy, xx = _grid(size)
    s = size / 192.0
    w = 11.0 * s
    top, bottom = 40 * s, 150 * s
    m = np.zeros((size, size), dtype=bool)

    # U: two verticals joined by a half ring.
    ul, ur = 30 * s, 78 * s
    rc = (ur - ul) / 2.0
    cy, cx = bottom - rc, (ul + ur) / 2.0
    m |= _stroke(yy, xx, (top, ul), (cy, ul), w)
    m |= _stroke(yy, xx, (top, ur), (cy, ur), w)
    ring = np.abs(np.hypot(yy - cy, xx - cx) - rc) <= w / 2.0
    m |= ring & (yy >= cy)

    # K: vertical plus two diagonals meeting at the stem.
    kl = 118 * s
    mid = (top + bottom) / 2.0
    m |= _stroke(yy, xx, (top, kl), (bottom, kl), w)
    m |= _stroke(yy, xx, (mid, kl + 2 * s), (top, kl + 46 * s), w)
    m |= _stroke(yy, xx, (mid - 4 * s, kl + 10 * s), (bottom, kl + 48 * s), w)
    return m.astype(np.float32)


def simulate_gated_speckle(
    flow,
    gates: int,
    depth_blur: float = 1.5,
    seed: int = 0,
    speckle_shape: Optional[float] = 1.0,
    read_noise: float = 0.05,
    flow_gain: float = 0.0,
) -> np.ndarray:
    """Stack of gated intensity frames of shape ``[gates, H, W]``.

    Each frame is the flow map blurred by photon diffusion (Gaussian of width
    ``depth_blur`` pixels), times unit-mean gamma speckle, plus Gaussian read
    noise. Frames are clipped at zero.

    The gamma shape is ``speckle_shape * (1 + flow_gain * blurred_flow)``:
    with a positive ``flow_gain`` faster flow averages more speckle
    realizations within an exposure and so lowers the local contrast.
    ``speckle_shape=None`` disables speckle.
    """
    if gates < 1:
        raise ValidationError(f"gates must be at least 1, got {gates}")
    f = flow.data if isinstance(flow, ImageTensor) else np.asarray(flow)
    if f.ndim != 2:
        raise ShapeError(f"flow map must be 2-D, got shape {f.shape}")
    base = f.astype(np.float64)
    if depth_blur > 0:
        base = ndimage.gaussian_filter(base, depth_blur, mode="nearest")
    rng = np.random.default_rng(seed)
    stack = np.repeat(base[None], gates, axis=0)
    if speckle_shape is not None:
        if speckle_shape <= 0 or flow_gain < 0:
            raise ValidationError("speckle_shape must be positive and flow_gain non-negative")
        shape = speckle_shape * (1.0 + flow_gain * np.clip(base, 0.0, None))
        shape = np.broadcast_to(shape, stack.shape)
        stack = stack * rng.gamma(shape, 1.0 / shape)
    if read_noise > 0:
        stack = stack + read_noise * rng.standard_normal(stack.shape)
    return np.clip(stack, 0.0, None).astype(np.float32)
