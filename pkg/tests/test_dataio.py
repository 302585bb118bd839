import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ctstandard.dataio import (Checkpoint, ImageTensor, Unit, WindowLevel, decode_checkpoint, decode_tensor,
                               encode_checkpoint, encode_tensor, load_checkpoint, load_tensor, render_png,
                               save_checkpoint, save_tensor, window_to_uint8)
from ctstandard.errors import FormatError, ShapeError, ValidationError

finite_f32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


def test_tensor_file_layout(tmp_path):
    t = ImageTensor(np.arange(4, dtype=np.float32).reshape(2, 2), Unit.HU)
    p = tmp_path / "t.cttn"
    save_tensor(t, p)
    raw = p.read_bytes()
    assert len(raw) == 4 + 4 + 1 + 8 + 1 + 16
    assert raw[:4] == b"CTTN"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert raw[8] == 2 and struct.unpack("<II", raw[9:17]) == (2, 2)
    assert raw[17] == Unit.HU
    assert np.frombuffer(raw[18:], "<f4").tolist() == [0, 1, 2, 3]
    assert load_tensor(p) == t


def test_nan_rejected():
    with pytest.raises(ValidationError):
        encode_tensor(ImageTensor(np.array([np.nan], np.float32)))


def test_truncated_payload():
    raw = encode_tensor(ImageTensor(np.zeros(3, np.float32)))
    with pytest.raises(FormatError):
        decode_tensor(raw[:-4])


def test_bad_magic():
    raw = encode_tensor(ImageTensor(np.zeros(3, np.float32)))
    with pytest.raises(FormatError):
        decode_tensor(b"XXXX" + raw[4:])


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=6), elements=finite_f32),
       st.sampled_from(list(Unit)))
def test_tensor_roundtrip(arr, unit):
    t = ImageTensor(arr, unit)
    back = decode_tensor(encode_tensor(t))
    assert back == t and back.unit == unit and back.shape == arr.shape


def test_empty_checkpoint_roundtrip(tmp_path):
    p = tmp_path / "c.ctck"
    save_checkpoint(Checkpoint({}), p)
    assert p.read_bytes() == b"CTCK" + struct.pack("<II", 1, 0)
    assert load_checkpoint(p).entries == {}


def test_checkpoint_order_and_bytes(tmp_path):
    c = Checkpoint.from_pairs([("enc.w1", ImageTensor(np.ones((2, 3), np.float32))),
                               ("enc.b1", ImageTensor(np.zeros(3, np.float32)))])
    raw = encode_checkpoint(c)
    back = decode_checkpoint(raw)
    assert list(back.entries) == ["enc.w1", "enc.b1"]
    assert encode_checkpoint(back) == raw


def test_checkpoint_duplicate_and_magic():
    t = ImageTensor(np.zeros(1, np.float32))
    with pytest.raises(ValidationError):
        Checkpoint.from_pairs([("a", t), ("a", t)])
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + encode_checkpoint(Checkpoint({}))[4:])


@pytest.mark.parametrize("v,px", [(-800.0, 0), (600.0, 255), (-100.0, 128), (-5000.0, 0), (5000.0, 255)])
def test_window_examples(v, px):
    assert window_to_uint8(np.array([[v]]), WindowLevel(-800, 600))[0, 0] == px


def test_window_half_to_even():
    # 0.5 / 255 of the window maps to exactly 0.5 before rounding
    w = WindowLevel(0.0, 255.0)
    assert window_to_uint8(np.array([[0.5, 1.5, 2.5]]), w).tolist() == [[0, 2, 2]]


@given(st.lists(st.floats(-2000, 2000), min_size=2, max_size=50))
def test_window_monotone(vals):
    v = np.sort(np.array(vals))[None]
    px = window_to_uint8(v, WindowLevel(-800, 600))[0]
    assert np.all(np.diff(px.astype(int)) >= 0)


def test_window_level_validation():
    with pytest.raises(ValidationError):
        WindowLevel(10, 10)


def test_render_png(tmp_path):
    from PIL import Image

    img = np.linspace(-1000, 1000, 64, dtype=np.float32).reshape(8, 8)
    render_png(ImageTensor(img, Unit.HU), path=tmp_path / "x.png")
    back = np.array(Image.open(tmp_path / "x.png"))
    assert back.shape == (8, 8) and back.dtype == np.uint8
    assert back.min() == 0 and back.max() == 255
    with pytest.raises(ShapeError):
        render_png(ImageTensor(np.zeros(4, np.float32)), path=tmp_path / "y.png")
