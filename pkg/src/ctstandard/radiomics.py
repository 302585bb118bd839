"""2-D radiomic features over a region of interest.

Six feature classes are computed: gradient orientation histogram (GOH),
co-occurrence (GLCM), run length (GLRLM), direct intensity statistics (ID),
intensity histogram (IH) and neighbourhood grey-tone difference (NID).
Texture matrices use grey levels numbered from 1 after quantization.

Degenerate regions never produce NaN: zero-variance correlation is 1,
``0 * log(0)`` is 0, and ratios with an empty denominator fall back to 0
(coarseness to ``1e6``).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dataio import ImageTensor
from .errors import ShapeError, ValidationError

MIN_ROI_PIXELS = 16
IH_BINS = 64
GOH_BINS = 8
COARSENESS_CAP = 1e6

# (dy, dx) steps for 0, 45, 90 and 135 degrees at distance 1.
OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


class FeatureClass(str, enum.Enum):
    GOH = "GOH"
    GLCM = "GLCM"
    GLRLM = "GLRLM"
    ID = "ID"
    IH = "IH"
    NID = "NID"


@dataclass(frozen=True)
class QuantizerSpec:
    n_levels: int = 32
    mode: str = "fixed"
    lo: float = -1000.0
    hi: float = 400.0

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValidationError(f"n_levels must be >= 2, got {self.n_levels}")
        if self.mode not in ("fixed", "minmax"):
            raise ValidationError(f"quantizer mode must be 'fixed' or 'minmax', got {self.mode!r}")
        if self.mode == "fixed" and not self.lo < self.hi:
            raise ValidationError("fixed quantizer window needs lo < hi")

    def bounds(self, values: np.ndarray) -> tuple[float, float]:
        if self.mode == "fixed":
            return self.lo, self.hi
        return float(values.min()), float(values.max())


FeatureVector = dict  # ordered name -> float, names prefixed "<CLASS>_"


def feature_class(name: str) -> FeatureClass:
    return FeatureClass(name.split("_", 1)[0])


def class_features(fv: FeatureVector, cls: FeatureClass | str) -> list[str]:
    prefix = FeatureClass(cls).value + "_"
    return sorted(n for n in fv if n.startswith(prefix))


def quantize(img: np.ndarray, roi: np.ndarray, q: QuantizerSpec) -> np.ndarray:
    """Integer grey levels 1..n_levels inside the ROI, 0 outside."""
    vals = img[roi].astype(np.float64)
    lo, hi = q.bounds(vals)
    levels = np.zeros(img.shape, dtype=np.int64)
    if hi > lo:
        scaled = np.floor((vals - lo) / (hi - lo) * q.n_levels)
        levels[roi] = np.clip(scaled, 0, q.n_levels - 1).astype(np.int64) + 1
    else:
        levels[roi] = 1
    return levels


def _pairs(levels: np.ndarray, offset: tuple[int, int]):
    """Level pairs (a, b) for all in-ROI pixels p and p + offset."""
    dy, dx = offset
    h, w = levels.shape
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    a = levels[y0:y1, x0:x1]
    b = levels[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    keep = (a > 0) & (b > 0)
    return a[keep], b[keep]


def glcm_matrix(levels: np.ndarray, n_levels: int, offset: tuple[int, int], symmetric: bool = True) -> np.ndarray:
    """Raw co-occurrence counts, indexed [i-1, j-1]."""
    a, b = _pairs(levels, offset)
    m = np.zeros((n_levels, n_levels), dtype=np.int64)
    np.add.at(m, (a - 1, b - 1), 1)
    if symmetric:
        m = m + m.T
    return m


def _line_starts(shape, direction):
    """Start pixels of every line along ``direction`` that covers the grid."""
    h, w = shape
    dy, dx = direction
    starts = []
    for y in range(h):
        for x in range(w):
            py, px = y - dy, x - dx
            if not (0 <= py < h and 0 <= px < w):
                starts.append((y, x))
    return starts


def glrlm_matrix(levels: np.ndarray, n_levels: int, direction: tuple[int, int]) -> np.ndarray:
    """Run-length counts indexed [level-1, run_length-1]."""
    h, w = levels.shape
    m = np.zeros((n_levels, max(h, w)), dtype=np.int64)
    dy, dx = direction
    for y, x in _line_starts(levels.shape, direction):
        run_level, run_len = 0, 0
        while 0 <= y < h and 0 <= x < w:
            v = levels[y, x]
            if v == run_level and v > 0:
                run_len += 1
            else:
                if run_level > 0:
                    m[run_level - 1, run_len - 1] += 1
                run_level, run_len = v, 1
            y += dy
            x += dx
        if run_level > 0:
            m[run_level - 1, run_len - 1] += 1
    return m


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _glcm_features(levels: np.ndarray, n_levels: int) -> dict[str, float]:
    i, j = np.meshgrid(np.arange(1, n_levels + 1), np.arange(1, n_levels + 1), indexing="ij")
    rows = []
    for off in OFFSETS:
        m = glcm_matrix(levels, n_levels, off)
        total = m.sum()
        if total == 0:
            continue
        p = m / total
        mu_i, mu_j = (p * i).sum(), (p * j).sum()
        sd_i = np.sqrt((p * (i - mu_i) ** 2).sum())
        sd_j = np.sqrt((p * (j - mu_j) ** 2).sum())
        if sd_i * sd_j > 1e-12:
            corr = ((p * (i - mu_i) * (j - mu_j)).sum()) / (sd_i * sd_j)
        else:
            corr = 1.0
        rows.append([
            (p * p).sum(),
            (p * (i - j) ** 2).sum(),
            corr,
            (p / (1.0 + np.abs(i - j))).sum(),
            _entropy(p),
            (p * np.abs(i - j)).sum(),
        ])
    names = ["energy", "contrast", "correlation", "homogeneity", "entropy", "dissimilarity"]
    if not rows:
        vals = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0]
    else:
        vals = np.mean(np.array(rows), axis=0).tolist()
    return {f"GLCM_{n}": float(v) for n, v in zip(names, vals)}


def _glrlm_features(levels: np.ndarray, n_levels: int) -> dict[str, float]:
    n_pix = int((levels > 0).sum())
    rows = []
    for direction in OFFSETS:
        r = glrlm_matrix(levels, n_levels, direction).astype(np.float64)
        nr = r.sum()
        gi = np.arange(1, r.shape[0] + 1, dtype=np.float64)[:, None]
        rj = np.arange(1, r.shape[1] + 1, dtype=np.float64)[None, :]
        rows.append([
            (r / rj ** 2).sum() / nr,
            (r * rj ** 2).sum() / nr,
            (r.sum(axis=1) ** 2).sum() / nr,
            (r.sum(axis=0) ** 2).sum() / nr,
            nr / n_pix,
            (r / gi ** 2).sum() / nr,
            (r * gi ** 2).sum() / nr,
        ])
    names = ["SRE", "LRE", "GLN", "RLN", "RP", "LGRE", "HGRE"]
    vals = np.mean(np.array(rows), axis=0)
    return {f"GLRLM_{n}": float(v) for n, v in zip(names, vals)}


def ngtdm(levels: np.ndarray, n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-level counts ``n`` and summed absolute differences ``s`` (3x3 neighbourhood)."""
    h, w = levels.shape
    pad = np.pad(levels, 1)
    in_roi = (pad > 0).astype(np.float64)
    vals = pad.astype(np.float64)
    nsum = np.zeros((h, w))
    ncnt = np.zeros((h, w))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nsum += vals[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            ncnt += in_roi[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    valid = (levels > 0) & (ncnt > 0)
    lv = levels[valid]
    diff = np.abs(lv - nsum[valid] / ncnt[valid])
    n = np.bincount(lv - 1, minlength=n_levels).astype(np.float64)
    s = np.bincount(lv - 1, weights=diff, minlength=n_levels)
    return n, s


def _nid_features(levels: np.ndarray, n_levels: int) -> dict[str, float]:
    n, s = ngtdm(levels, n_levels)
    n_valid = n.sum()
    out = dict.fromkeys(["coarseness", "contrast", "busyness", "complexity", "strength"], 0.0)
    if n_valid == 0:
        out["coarseness"] = COARSENESS_CAP
        return {f"NID_{k}": v for k, v in out.items()}
    p = n / n_valid
    present = p > 0
    g = np.arange(1, n_levels + 1, dtype=np.float64)[present]
    pp, ss = p[present], s[present]
    ng = len(pp)
    ps = (pp * ss).sum()
    out["coarseness"] = 1.0 / ps if ps > 0 else COARSENESS_CAP
    out["coarseness"] = min(out["coarseness"], COARSENESS_CAP)
    if ng > 1:
        gi, gj = g[:, None], g[None, :]
        pi, pj = pp[:, None], pp[None, :]
        si, sj = ss[:, None], ss[None, :]
        out["contrast"] = float((pi * pj * (gi - gj) ** 2).sum() / (ng * (ng - 1)) * ss.sum() / n_valid)
        denom = np.abs(gi * pi - gj * pj).sum()
        out["busyness"] = float(ps / denom) if denom > 0 else 0.0
        out["complexity"] = float((np.abs(gi - gj) * (pi * si + pj * sj) / (pi + pj)).sum() / n_valid)
        out["strength"] = float(((pi + pj) * (gi - gj) ** 2).sum() / ss.sum()) if ss.sum() > 0 else 0.0
    return {f"NID_{k}": float(v) for k, v in out.items()}


def _goh_features(img: np.ndarray, roi: np.ndarray) -> dict[str, float]:
    gy, gx = np.gradient(img.astype(np.float64))
    mag = np.hypot(gx, gy)[roi]
    ang = np.arctan2(gy, gx)[roi]
    bins = np.floor((ang + np.pi) / (2 * np.pi) * GOH_BINS).astype(np.int64) % GOH_BINS
    hist = np.bincount(bins, weights=mag, minlength=GOH_BINS)
    total = hist.sum()
    hist = hist / total if total > 0 else np.zeros(GOH_BINS)
    out = {f"GOH_bin{k}": float(v) for k, v in enumerate(hist)}
    out["GOH_entropy"] = _entropy(hist)
    return out


def _id_features(vals: np.ndarray) -> dict[str, float]:
    std = float(vals.std())
    if std > 0:
        skew = float(stats.skew(vals, bias=False))
        kurt = float(stats.kurtosis(vals, fisher=True, bias=False))
    else:
        skew = kurt = 0.0
    p10, p25, p75, p90 = np.percentile(vals, [10, 25, 75, 90])
    return {
        "ID_mean": float(vals.mean()),
        "ID_median": float(np.median(vals)),
        "ID_std": std,
        "ID_skewness": skew,
        "ID_kurtosis": kurt,
        "ID_min": float(vals.min()),
        "ID_max": float(vals.max()),
        "ID_range": float(vals.max() - vals.min()),
        "ID_p10": float(p10),
        "ID_p25": float(p25),
        "ID_p75": float(p75),
        "ID_p90": float(p90),
        "ID_energy": float((vals ** 2).sum()),
    }


def _ih_features(vals: np.ndarray, q: QuantizerSpec) -> dict[str, float]:
    lo, hi = q.bounds(vals)
    if hi > lo:
        idx = np.clip(np.floor((vals - lo) / (hi - lo) * IH_BINS), 0, IH_BINS - 1).astype(np.int64)
    else:
        idx = np.zeros(len(vals), dtype=np.int64)
    p = np.bincount(idx, minlength=IH_BINS) / len(vals)
    bins = np.arange(1, IH_BINS + 1, dtype=np.float64)
    cdf = np.cumsum(p)
    q1 = bins[np.searchsorted(cdf, 0.25)]
    q3 = bins[np.searchsorted(cdf, 0.75)]
    mean = (p * bins).sum()
    return {
        "IH_entropy": _entropy(p),
        "IH_uniformity": float((p * p).sum()),
        "IH_mode": float(np.argmax(p) + 1),
        "IH_qcod": float((q3 - q1) / (q3 + q1)),
        "IH_mean": float(mean),
        "IH_std": float(np.sqrt((p * (bins - mean) ** 2).sum())),
    }


def _crop(levels: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(levels)
    return levels[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def extract_features(img, roi, q: QuantizerSpec = QuantizerSpec()) -> FeatureVector:
    """All features for one ROI, ordered by class then name."""
    x = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    roi = np.asarray(roi, dtype=bool)
    if x.ndim != 2 or roi.shape != x.shape:
        raise ShapeError(f"image {x.shape} and ROI {roi.shape} must be equal 2-D shapes")
    if roi.sum() < MIN_ROI_PIXELS:
        raise ValidationError(f"ROI has {int(roi.sum())} pixels, need at least {MIN_ROI_PIXELS}")
    x = x.astype(np.float64)
    vals = x[roi]
    levels = _crop(quantize(x, roi, q))
    fv: FeatureVector = {}
    fv.update(_goh_features(x, roi))
    fv.update(_glcm_features(levels, q.n_levels))
    fv.update(_glrlm_features(levels, q.n_levels))
    fv.update(_id_features(vals))
    fv.update(_ih_features(vals, q))
    fv.update(_nid_features(levels, q.n_levels))
    return fv


def write_feature_csv(rows, path) -> None:
    """``rows``: iterable of (image_id, roi_id, FeatureVector)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "roi_id", "class", "feature", "value"])
        for image_id, roi_id, fv in rows:
            for name, value in fv.items():
                w.writerow([image_id, roi_id, feature_class(name).value, name, repr(float(value))])
