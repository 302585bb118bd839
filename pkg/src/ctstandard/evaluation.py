"""Reproducibility and image-quality metrics.

``error_rate`` and ``ccc`` follow the usual radiomics conventions: error
rate is relative to the *standard* feature value, and a feature counts as
reproducible when its error rate is strictly below 15 percent. CCC uses
population moments.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError
from .radiomics import FeatureClass, FeatureVector, class_features

EPS = 1e-12
REPRO_THRESHOLD = 15.0
THRESHOLDS = np.round(np.arange(0, 51) * 0.01, 2)

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def error_rate(f_s: float, f_t: float) -> float:
    """Percent deviation of synthesized value ``f_s`` from standard value ``f_t``."""
    return abs(f_t - f_s) / max(abs(f_t), EPS) * 100.0


def is_degenerate(f_t: float) -> bool:
    return abs(f_t) < EPS


def is_reproducible(f_s: float, f_t: float, threshold: float = REPRO_THRESHOLD) -> bool:
    return error_rate(f_s, f_t) < threshold


def ccc(s: Sequence[float], t: Sequence[float]) -> float:
    """Lin's concordance correlation coefficient."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise ValidationError(f"ccc needs two 1-D vectors of equal length, got {s.shape} and {t.shape}")
    if len(s) < 2:
        raise ValidationError("ccc needs at least two values")
    mu_s, mu_t = s.mean(), t.mean()
    var_s, var_t = s.var(), t.var()
    if var_s == 0 and var_t == 0:
        return 1.0 if mu_s == mu_t else 0.0
    if var_s == 0 or var_t == 0:
        return 0.0
    cov = ((s - mu_s) * (t - mu_t)).mean()
    return float(2.0 * cov / (var_s + var_t + (mu_s - mu_t) ** 2))


def class_ccc(fv_s: FeatureVector, fv_t: FeatureVector, cls: FeatureClass | str) -> float:
    names = class_features(fv_t, cls)
    if len(names) < 2:
        raise ValidationError(f"class {cls} has {len(names)} features; CCC needs at least two")
    missing = [n for n in names if n not in fv_s]
    if missing:
        raise ValidationError(f"synthesized feature vector lacks {missing}")
    return ccc([fv_s[n] for n in names], [fv_t[n] for n in names])


# -- image quality ------------------------------------------------------------


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError(f"expected two equal 2-D images, got {x.shape} and {y.shape}")
    return x, y


def psnr(x, y, peak: float = 1.0) -> float:
    x, y = _check_pair(x, y)
    mse = float(((x - y) ** 2).mean())
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    h = k // 2
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim_map(x, y, peak: float = 1.0) -> np.ndarray:
    """Local SSIM on every fully covered 11x11 Gaussian window."""
    x, y = _check_pair(x, y)
    if min(x.shape) < SSIM_WIN:
        raise ShapeError(f"images must be at least {SSIM_WIN}x{SSIM_WIN} for SSIM")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(x, y, peak: float = 1.0) -> float:
    x, y = _check_pair(x, y)
    if np.array_equal(x, y):
        return 1.0
    return float(ssim_map(x, y, peak).mean())


def image_ccc(x, y) -> float:
    """CCC between two images read as flat pixel vectors."""
    x, y = _check_pair(x, y)
    return ccc(x.ravel(), y.ravel())


# -- reproducibility report ---------------------------------------------------


@dataclass
class ReproReport:
    thresholds: np.ndarray
    counts: np.ndarray
    mean_errors: dict[str, float]
    degenerate: list[str] = field(default_factory=list)
    class_ccc: dict[str, tuple[float, float]] = field(default_factory=dict)

    def count_at(self, threshold: float) -> int:
        idx = int(np.argmin(np.abs(self.thresholds - threshold)))
        return int(self.counts[idx])

    @property
    def total(self) -> int:
        return len(self.mean_errors)

    def to_dict(self) -> dict:
        return {
            "curve": [[float(t), int(c)] for t, c in zip(self.thresholds, self.counts)],
            "reproducible_at_15": self.count_at(0.15),
            "total_features": self.total,
            "degenerate_features": self.degenerate,
            "class_ccc": {k: {"mean": m, "std": s} for k, (m, s) in self.class_ccc.items()},
        }


def repro_curve(pairs: Iterable[tuple[FeatureVector, FeatureVector]]) -> ReproReport:
    """Reproducible-feature counts over error thresholds 0.00..0.50.

    ``pairs`` holds one ``(synthesized, standard)`` feature-vector pair per
    ROI. A feature's error is averaged over ROIs before thresholding, and it
    counts at threshold ``tau`` when that mean error (percent) is below
    ``100 * tau``.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("repro_curve needs at least one ROI pair")
    names = list(pairs[0][1])
    errors = {n: [] for n in names}
    degenerate = set()
    for fv_s, fv_t in pairs:
        for n in names:
            errors[n].append(error_rate(fv_s[n], fv_t[n]))
            if is_degenerate(fv_t[n]):
                degenerate.add(n)
    mean_err = {n: float(np.mean(v)) for n, v in errors.items()}
    err_arr = np.array(list(mean_err.values()))
    counts = np.array([int((err_arr < 100.0 * t).sum()) for t in THRESHOLDS])

    per_class = {}
    for cls in FeatureClass:
        vals = [class_ccc(fv_s, fv_t, cls) for fv_s, fv_t in pairs if len(class_features(fv_t, cls)) >= 2]
        if vals:
            per_class[cls.value] = (float(np.mean(vals)), float(np.std(vals)))
    return ReproReport(THRESHOLDS.copy(), counts, mean_err, sorted(degenerate), per_class)


def write_report(report: ReproReport, out_dir, prefix: str = "") -> None:
    """Write ``repro_curve.csv``, ``ccc_by_class.csv`` and ``errors.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{prefix}repro_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "count"])
        for t, c in zip(report.thresholds, report.counts):
            w.writerow([f"{t:.2f}", int(c)])
    with open(os.path.join(out_dir, f"{prefix}ccc_by_class.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "mean", "std"])
        for cls, (m, s) in report.class_ccc.items():
            w.writerow([cls, repr(m), repr(s)])
    with open(os.path.join(out_dir, f"{prefix}errors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "mean_error"])
        for n, e in report.mean_errors.items():
            w.writerow([n, repr(e)])


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
