"""Tensor and checkpoint persistence plus windowed PNG rendering.

Two little-endian binary layouts are used throughout the package:

``CTTN`` (one tensor)::

    magic "CTTN" | version u32 | ndim u8 | dims u32 * ndim | unit u8 | f32 * prod(dims)

``CTCK`` (ordered collection of named tensors)::

    magic "CTCK" | version u32 | count u32 | (name_len u16 | utf-8 name | CTTN record) * count
"""

from __future__ import annotations

import enum
import io
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError, ValidationError

TENSOR_MAGIC = b"CTTN"
CHECKPOINT_MAGIC = b"CTCK"
FORMAT_VERSION = 1

# Display window used for all CT previews, in HU.
DEFAULT_WINDOW = (-800.0, 600.0)


class Unit(enum.IntEnum):
    HU = 0
    NORMALIZED = 1
    DIMENSIONLESS = 2


@dataclass
class ImageTensor:
    """A float32 array tagged with its intensity unit."""

    data: np.ndarray
    unit: Unit = Unit.DIMENSIONLESS

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype="<f4")
        self.unit = Unit(self.unit)
        if self.data.ndim == 0 or any(d <= 0 for d in self.data.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return (
            self.unit == other.unit
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass
class WindowLevel:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError(f"window requires lo < hi, got [{self.lo}, {self.hi}]")


@dataclass
class Checkpoint:
    """Ordered mapping of parameter names to tensors."""

    entries: dict[str, ImageTensor] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_pairs(cls, pairs, version: int = FORMAT_VERSION) -> "Checkpoint":
        entries: dict[str, ImageTensor] = {}
        for name, t in pairs:
            if name in entries:
                raise ValidationError(f"duplicate checkpoint entry name {name!r}")
            _check_name(name)
            entries[name] = as_tensor(t)
        return cls(entries, version)

    def __getitem__(self, name: str) -> ImageTensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.entries if n.startswith(prefix)]

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.entries.items() if n.startswith(prefix)}


def as_tensor(t, unit: Unit = Unit.DIMENSIONLESS) -> ImageTensor:
    if isinstance(t, ImageTensor):
        return t
    return ImageTensor(np.asarray(t), unit)


# -- CTTN -------------------------------------------------------------------


def _check_finite(t: ImageTensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise ValidationError("tensor contains NaN or Inf values")


def encode_tensor(t: ImageTensor) -> bytes:
    t = as_tensor(t)
    _check_finite(t)
    if t.data.ndim > 255:
        raise ShapeError("at most 255 dimensions are supported")
    head = TENSOR_MAGIC + struct.pack("<IB", FORMAT_VERSION, t.data.ndim)
    head += struct.pack(f"<{t.data.ndim}I", *t.data.shape)
    head += struct.pack("<B", int(t.unit))
    return head + t.data.astype("<f4", copy=False).tobytes()


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def _read_tensor(fh: BinaryIO) -> ImageTensor:
    magic = _read_exact(fh, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, ndim = struct.unpack("<IB", _read_exact(fh, 5, "tensor header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if ndim == 0:
        raise FormatError("tensor has zero dimensions")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "tensor dims"))
    if any(d == 0 for d in dims):
        raise FormatError(f"tensor has a zero-sized dimension {dims}")
    (unit_code,) = struct.unpack("<B", _read_exact(fh, 1, "tensor unit"))
    try:
        unit = Unit(unit_code)
    except ValueError:
        raise FormatError(f"unknown unit code {unit_code}") from None
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(fh, 4 * count, "tensor payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return ImageTensor(data, unit)


def decode_tensor(buf: bytes) -> ImageTensor:
    fh = io.BytesIO(buf)
    t = _read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after tensor payload")
    return t


def save_tensor(t, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(as_tensor(t)))


def load_tensor(path: str | os.PathLike) -> ImageTensor:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


# -- CTCK -------------------------------------------------------------------


def _check_name(name: str) -> bytes:
    if not isinstance(name, str) or not name:
        raise ValidationError("checkpoint entry names must be non-empty strings")
    if not name.isascii():
        raise ValidationError(f"checkpoint entry name {name!r} is not ASCII")
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError("checkpoint entry name too long")
    return raw


def encode_checkpoint(c: Checkpoint) -> bytes:
    names = list(c.entries)
    if len(set(names)) != len(names):
        raise ValidationError("duplicate checkpoint entry names")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", c.version, len(names))]
    for name in names:
        raw = _check_name(name)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(encode_tensor(c.entries[name]))
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    fh = io.BytesIO(buf)
    magic = _read_exact(fh, 4, "checkpoint magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    version, count = struct.unpack("<II", _read_exact(fh, 8, "checkpoint header"))
    entries: dict[str, ImageTensor] = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(fh, 2, "entry name length"))
        try:
            name = _read_exact(fh, n, "entry name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("entry name is not valid UTF-8") from exc
        if not name or name in entries:
            raise FormatError(f"empty or duplicate entry name {name!r}")
        entries[name] = _read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after checkpoint")
    return Checkpoint(entries, version)


def save_checkpoint(c: Checkpoint, path: str | os.PathLike) -> None:
    buf = encode_checkpoint(c)
    with open(path, "wb") as fh:
        fh.write(buf)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# -- rendering --------------------------------------------------------------


def window_to_uint8(img: np.ndarray, window: WindowLevel) -> np.ndarray:
    """Map intensities to 0..255 through a linear display window."""
    x = np.asarray(img, dtype=np.float64)
    scaled = np.clip((x - window.lo) / (window.hi - window.lo), 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)  # rint rounds half to even


def render_png(t, window: WindowLevel | None = None, path: str | os.PathLike = "out.png") -> None:
    t = as_tensor(t)
    if t.data.ndim != 2:
        raise ShapeError(f"render_png needs a 2-D tensor, got shape {t.shape}")
    if window is None:
        window = WindowLevel(*DEFAULT_WINDOW)
    Image.fromarray(window_to_uint8(t.data, window)).save(path, format="PNG")
