"""Minimal DICOM Part-10 reader/writer for uncompressed CT slices.

Only Explicit VR Little Endian is accepted. Unknown and private elements are
skipped; sequences are walked just far enough to skip them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataio import ImageTensor, Unit
from .errors import FormatError, UnsupportedError, ValidationError

EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
CT_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.2"

# VRs whose explicit encoding uses 2 reserved bytes and a u32 length.
LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV"}

UNDEFINED_LENGTH = 0xFFFFFFFF
ITEM = (0xFFFE, 0xE000)
ITEM_DELIM = (0xFFFE, 0xE00D)
SEQ_DELIM = (0xFFFE, 0xE0DD)

TRANSFER_SYNTAX = (0x0002, 0x0010)
SLICE_THICKNESS = (0x0018, 0x0050)
CONVOLUTION_KERNEL = (0x0018, 0x1210)
ROWS = (0x0028, 0x0010)
COLUMNS = (0x0028, 0x0011)
BITS_ALLOCATED = (0x0028, 0x0100)
PIXEL_REPRESENTATION = (0x0028, 0x0103)
RESCALE_INTERCEPT = (0x0028, 0x1052)
RESCALE_SLOPE = (0x0028, 0x1053)
PIXEL_DATA = (0x7FE0, 0x0010)


@dataclass
class DicomElement:
    group: int
    element: int
    vr: str
    value: bytes

    @property
    def tag(self) -> tuple[int, int]:
        return (self.group, self.element)


@dataclass
class CtSliceMeta:
    rows: int
    cols: int
    bits_allocated: int = 16
    rescale_slope: float = 1.0
    rescale_intercept: float = 0.0
    pixel_representation: int = 0
    slice_thickness: Optional[float] = None
    convolution_kernel: Optional[str] = None

    def validate(self) -> None:
        if self.rows <= 0 or self.cols <= 0:
            raise ValidationError(f"rows and cols must be positive, got {self.rows}x{self.cols}")
        if self.bits_allocated not in (8, 16):
            raise ValidationError(f"bits_allocated must be 8 or 16, got {self.bits_allocated}")
        if self.pixel_representation not in (0, 1):
            raise ValidationError("pixel_representation must be 0 or 1")
        if self.rescale_slope == 0 or not np.isfinite(self.rescale_slope):
            raise ValidationError("rescale_slope must be finite and non-zero")

    @property
    def stored_dtype(self) -> np.dtype:
        kind = "i" if self.pixel_representation else "u"
        return np.dtype(f"<{kind}{self.bits_allocated // 8}")


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"element extends past end of data at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def at_end(self) -> bool:
        return self.pos >= len(self.buf)

    def tag(self) -> tuple[int, int]:
        return struct.unpack("<HH", self.take(4))

    def element(self) -> DicomElement:
        group, elem = self.tag()
        if group == 0xFFFE:
            raise FormatError(f"unexpected delimiter ({group:04X},{elem:04X})")
        vr = self.take(2)
        if not (vr.isalpha() and vr.isupper()):
            raise FormatError(f"invalid VR {vr!r} for ({group:04X},{elem:04X})")
        if vr in LONG_VRS:
            self.take(2)
            (length,) = struct.unpack("<I", self.take(4))
        else:
            (length,) = struct.unpack("<H", self.take(2))
        if length == UNDEFINED_LENGTH:
            if vr != b"SQ" and (group, elem) != PIXEL_DATA:
                raise FormatError(f"undefined length on non-sequence ({group:04X},{elem:04X})")
            if (group, elem) == PIXEL_DATA:
                raise UnsupportedError("encapsulated (compressed) pixel data is not supported")
            self._skip_sequence()
            return DicomElement(group, elem, vr.decode(), b"")
        return DicomElement(group, elem, vr.decode(), self.take(length))

    def _skip_sequence(self) -> None:
        while True:
            tag = self.tag()
            (length,) = struct.unpack("<I", self.take(4))
            if tag == SEQ_DELIM:
                return
            if tag != ITEM:
                raise FormatError(f"expected sequence item, got ({tag[0]:04X},{tag[1]:04X})")
            if length != UNDEFINED_LENGTH:
                self.take(length)
                continue
            while True:
                if self.buf[self.pos:self.pos + 4] == struct.pack("<HH", *ITEM_DELIM):
                    self.take(8)
                    break
                self.element()


def _text(el: DicomElement) -> str:
    return el.value.rstrip(b"\x00 ").decode("ascii", errors="replace").strip()


def _us(el: DicomElement) -> int:
    if len(el.value) < 2:
        raise FormatError(f"element ({el.group:04X},{el.element:04X}) too short for US")
    return struct.unpack("<H", el.value[:2])[0]


def _ds(el: DicomElement) -> float:
    try:
        return float(_text(el).split("\\")[0])
    except ValueError:
        raise FormatError(f"malformed decimal string in ({el.group:04X},{el.element:04X})") from None


def read_elements(buf: bytes) -> list[DicomElement]:
    """Parse a Part-10 byte string into its top-level data elements."""
    if len(buf) < 132 or buf[128:132] != b"DICM":
        raise FormatError("missing DICM marker after 128-byte preamble")
    r = _Reader(buf, 132)
    out: list[DicomElement] = []
    last = (-1, -1)
    while not r.at_end():
        if len(buf) - r.pos < 8:
            raise FormatError("truncated element header")
        el = r.element()
        if el.group == 0x0002 and last[0] != 0x0002 and last != (-1, -1):
            raise FormatError("file meta group must come first")
        if el.tag <= last:
            raise FormatError(f"element ({el.group:04X},{el.element:04X}) out of ascending order")
        last = el.tag
        out.append(el)
        if el.tag == TRANSFER_SYNTAX:
            ts = _text(el)
            if ts != EXPLICIT_VR_LE:
                raise UnsupportedError(f"transfer syntax {ts} is not supported")
    return out


def parse_dicom(buf: bytes) -> tuple[CtSliceMeta, ImageTensor]:
    """Decode an uncompressed CT slice and convert stored values to HU."""
    elements = {el.tag: el for el in read_elements(buf)}
    if TRANSFER_SYNTAX not in elements:
        raise FormatError("file meta lacks a transfer syntax")
    if PIXEL_DATA not in elements:
        raise FormatError("no PixelData (7FE0,0010) element")
    for tag in (ROWS, COLUMNS, BITS_ALLOCATED):
        if tag not in elements:
            raise FormatError(f"required element ({tag[0]:04X},{tag[1]:04X}) missing")

    meta = CtSliceMeta(
        rows=_us(elements[ROWS]),
        cols=_us(elements[COLUMNS]),
        bits_allocated=_us(elements[BITS_ALLOCATED]),
        pixel_representation=_us(elements[PIXEL_REPRESENTATION]) if PIXEL_REPRESENTATION in elements else 0,
        rescale_slope=_ds(elements[RESCALE_SLOPE]) if RESCALE_SLOPE in elements else 1.0,
        rescale_intercept=_ds(elements[RESCALE_INTERCEPT]) if RESCALE_INTERCEPT in elements else 0.0,
        slice_thickness=_ds(elements[SLICE_THICKNESS]) if SLICE_THICKNESS in elements else None,
        convolution_kernel=_text(elements[CONVOLUTION_KERNEL]) if CONVOLUTION_KERNEL in elements else None,
    )
    if meta.bits_allocated not in (8, 16):
        raise UnsupportedError(f"bits_allocated {meta.bits_allocated} is not supported")
    try:
        meta.validate()
    except ValidationError as exc:
        raise FormatError(str(exc)) from exc

    n = meta.rows * meta.cols
    raw = elements[PIXEL_DATA].value
    need = n * meta.bits_allocated // 8
    if len(raw) < need:
        raise FormatError(f"pixel data holds {len(raw)} bytes, need {need}")
    stored = np.frombuffer(raw[:need], dtype=meta.stored_dtype).reshape(meta.rows, meta.cols)
    hu = stored.astype(np.float64) * meta.rescale_slope + meta.rescale_intercept
    return meta, ImageTensor(hu.astype(np.float32), Unit.HU)


# -- writer -------------------------------------------------------------------


def _pad_even(value: bytes, pad: bytes = b" ") -> bytes:
    return value + pad if len(value) % 2 else value


def _encode(tag: tuple[int, int], vr: str, value: bytes) -> bytes:
    pad = b"\x00" if vr in ("UI", "OB") else b" "
    value = _pad_even(value, pad)
    vrb = vr.encode()
    if vrb in LONG_VRS:
        return struct.pack("<HH2sHI", tag[0], tag[1], vrb, 0, len(value)) + value
    return struct.pack("<HH2sH", tag[0], tag[1], vrb, len(value)) + value


def _ds_text(x: float) -> bytes:
    s = repr(float(x))
    if len(s) > 16:
        s = f"{x:.10g}"
    return s.encode()


def write_minimal_dicom(meta: CtSliceMeta, img) -> bytes:
    """Serialize a 2-D HU image as an Explicit VR Little Endian CT slice."""
    meta.validate()
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    if data.shape != (meta.rows, meta.cols):
        raise ValidationError(f"image shape {data.shape} does not match {meta.rows}x{meta.cols}")
    stored_f = np.rint((data.astype(np.float64) - meta.rescale_intercept) / meta.rescale_slope)
    info = np.iinfo(meta.stored_dtype)
    if not np.all(np.isfinite(stored_f)) or stored_f.min() < info.min or stored_f.max() > info.max:
        raise ValidationError(f"stored values fall outside the {meta.stored_dtype} range")
    pixels = stored_f.astype(meta.stored_dtype).tobytes()

    body = [
        (SLICE_THICKNESS, "DS", _ds_text(meta.slice_thickness)) if meta.slice_thickness is not None else None,
        (CONVOLUTION_KERNEL, "SH", meta.convolution_kernel.encode("ascii")) if meta.convolution_kernel else None,
        ((0x0028, 0x0002), "US", struct.pack("<H", 1)),
        ((0x0028, 0x0004), "CS", b"MONOCHROME2"),
        (ROWS, "US", struct.pack("<H", meta.rows)),
        (COLUMNS, "US", struct.pack("<H", meta.cols)),
        (BITS_ALLOCATED, "US", struct.pack("<H", meta.bits_allocated)),
        ((0x0028, 0x0101), "US", struct.pack("<H", meta.bits_allocated)),
        ((0x0028, 0x0102), "US", struct.pack("<H", meta.bits_allocated - 1)),
        (PIXEL_REPRESENTATION, "US", struct.pack("<H", meta.pixel_representation)),
        (RESCALE_INTERCEPT, "DS", _ds_text(meta.rescale_intercept)),
        (RESCALE_SLOPE, "DS", _ds_text(meta.rescale_slope)),
        (PIXEL_DATA, "OW" if meta.bits_allocated == 16 else "OB", pixels),
    ]
    dataset = b"".join(_encode(*el) for el in body if el is not None)

    meta_elems = [
        ((0x0002, 0x0001), "OB", b"\x00\x01"),
        ((0x0002, 0x0002), "UI", CT_IMAGE_STORAGE.encode()),
        (TRANSFER_SYNTAX, "UI", EXPLICIT_VR_LE.encode()),
    ]
    group2 = b"".join(_encode(*el) for el in meta_elems)
    group_len = _encode((0x0002, 0x0000), "UL", struct.pack("<I", len(group2)))
    return b"\x00" * 128 + b"DICM" + group_len + group2 + dataset


def read_dicom_file(path) -> tuple[CtSliceMeta, ImageTensor]:
    with open(path, "rb") as fh:
        return parse_dicom(fh.read())
