import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctstandard.dicomlite import (CtSliceMeta, EXPLICIT_VR_LE, parse_dicom, read_dicom_file, read_elements,
                                  write_minimal_dicom)
from ctstandard.errors import CTStandardError, FormatError, UnsupportedError, ValidationError


def test_two_by_two_example():
    meta = CtSliceMeta(2, 2, 16, 1.0, -1024.0)
    hu = np.array([[0, 0], [100, -100]], np.float32)
    buf = write_minimal_dicom(meta, hu)
    stored = np.frombuffer(buf[-8:], "<u2")
    assert stored.tolist() == [1024, 1024, 1124, 924]
    m2, img = parse_dicom(buf)
    assert img.data.tolist() == hu.tolist()
    assert m2 == meta


def test_slope_two():
    _, img = parse_dicom(write_minimal_dicom(CtSliceMeta(1, 1, 16, 2.0, 0.0), np.array([[10.0]])))
    assert img.data.tolist() == [[10.0]]


def test_signed_two_complement():
    buf = write_minimal_dicom(CtSliceMeta(1, 1, 16, 1.0, 0.0, 1), np.array([[-5.0]]))
    assert buf[-2:] == struct.pack("<h", -5)
    assert parse_dicom(buf)[1].data.tolist() == [[-5.0]]


def test_missing_dicm():
    buf = bytearray(write_minimal_dicom(CtSliceMeta(1, 1), np.zeros((1, 1))))
    buf[128:132] = b"XXXX"
    with pytest.raises(FormatError):
        parse_dicom(bytes(buf))


def test_rows_zero_rejected():
    with pytest.raises(ValidationError):
        write_minimal_dicom(CtSliceMeta(0, 1), np.zeros((0, 1)))


def test_out_of_range_rejected():
    with pytest.raises(ValidationError):
        write_minimal_dicom(CtSliceMeta(1, 1, 8, 1.0, 0.0), np.array([[300.0]]))


def test_unsupported_transfer_syntax():
    buf = write_minimal_dicom(CtSliceMeta(1, 1), np.zeros((1, 1)))
    rle = b"1.2.840.10008.1.2.5"  # same length as the supported UID
    with pytest.raises(UnsupportedError):
        parse_dicom(buf.replace(EXPLICIT_VR_LE.encode(), rle))


def test_missing_pixel_data():
    meta = CtSliceMeta(1, 1)
    buf = write_minimal_dicom(meta, np.zeros((1, 1)))
    cut = buf.index(struct.pack("<HH", 0x7FE0, 0x0010))
    with pytest.raises(FormatError):
        parse_dicom(buf[:cut])


def test_private_and_sequence_elements_skipped():
    meta = CtSliceMeta(1, 2, 16, 1.0, -1024.0)
    buf = write_minimal_dicom(meta, np.array([[0.0, 1.0]]))
    # undefined-length SQ with one nested item, plus a private element, before (0028,xxxx)
    item = struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF) + struct.pack("<HH2sH", 0x0008, 0x0100, b"SH", 2) + b"AB" \
        + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
    sq = struct.pack("<HH2sHI", 0x0008, 0x1140, b"SQ", 0, 0xFFFFFFFF) + item + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    private = struct.pack("<HH2sH", 0x0009, 0x0010, b"LO", 4) + b"ACME"
    at = buf.index(struct.pack("<HH", 0x0028, 0x0002))
    m2, img = parse_dicom(buf[:at] + sq + private + buf[at:])
    assert img.data.tolist() == [[0.0, 1.0]]
    tags = [e.tag for e in read_elements(buf[:at] + sq + private + buf[at:])]
    assert (0x0009, 0x0010) in tags


def test_read_file(tmp_path):
    p = tmp_path / "x.dcm"
    p.write_bytes(write_minimal_dicom(CtSliceMeta(2, 3, 16, 1.0, -1024.0), np.full((2, 3), 40.0)))
    assert read_dicom_file(p)[1].data.tolist() == [[40.0] * 3] * 2


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 6), bits=st.sampled_from([8, 16]), signed=st.booleans(),
       slope=st.sampled_from([1.0, 0.5, 2.0, 0.25]), intercept=st.sampled_from([0.0, -1024.0, -1000.0, 17.5]),
       seed=st.integers(0, 2 ** 16))
def test_roundtrip_property(rows, cols, bits, signed, slope, intercept, seed):
    meta = CtSliceMeta(rows, cols, bits, slope, intercept, int(signed))
    info = np.iinfo(meta.stored_dtype)
    stored = np.random.default_rng(seed).integers(info.min, int(info.max) + 1, (rows, cols))
    hu = (stored * slope + intercept).astype(np.float32)
    m2, img = parse_dicom(write_minimal_dicom(meta, hu))
    assert m2 == meta and np.array_equal(img.data, hu)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_fuzz_never_crashes(data):
    buf = bytearray(write_minimal_dicom(CtSliceMeta(4, 4, 16, 1.0, -1024.0, 0, 1.0, "B30f"), np.zeros((4, 4))))
    n = data.draw(st.integers(0, len(buf)))
    buf = buf[:n]
    for _ in range(data.draw(st.integers(0, 4))):
        if buf:
            buf[data.draw(st.integers(0, len(buf) - 1))] = data.draw(st.integers(0, 255))
    try:
        parse_dicom(bytes(buf))
    except CTStandardError:
        pass
