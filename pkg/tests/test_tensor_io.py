import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from prle.detector import DetectorParams
from prle.tensor_io import (
    BadMagicError,
    ImageFormatError,
    TensorFormatError,
    TruncatedTensorError,
    UnsupportedVersionError,
    decode_tensor,
    encode_tensor,
    load_params,
    read_image_png,
    read_mask_png,
    read_tensor,
    save_params,
    write_image_png,
    write_mask_png,
    write_tensor,
)

finite_f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)
tensors = arrays(
    np.float32,
    st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple),
    elements=finite_f32,
)


def test_roundtrip_3x4(tmp_path):
    m = np.random.default_rng(0).random((3, 4)).astype(np.float32)
    write_tensor(tmp_path / "m.prle", m)
    back = read_tensor(tmp_path / "m.prle")
    assert back.shape == (3, 4)
    assert back.tobytes() == m.tobytes()


def test_quarter_encoding_bytes():
    data = encode_tensor(np.array([[0.25]]))
    assert data[:4] == b"PRLE"
    assert data[4] == 1 and data[5] == 2
    assert struct.unpack("<2I", data[6:14]) == (1, 1)
    assert data[14:] == bytes([0x00, 0x00, 0x80, 0x3E])


def test_header_layout_little_endian():
    data = encode_tensor(np.zeros((2, 3, 258), dtype=np.float32))
    assert data[6:18] == bytes([2, 0, 0, 0, 3, 0, 0, 0, 2, 1, 0, 0])
    assert len(data) == 18 + 4 * 2 * 3 * 258


def test_row_major_payload():
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    payload = encode_tensor(a)[6 + 8 :]
    assert np.frombuffer(payload, "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=200, deadline=None)
@given(tensors)
def test_roundtrip_bitwise(t):
    assert decode_tensor(encode_tensor(t)).tobytes() == t.tobytes()


def test_truncated_payload_raises():
    data = encode_tensor(np.ones((2, 2)))
    with pytest.raises(TruncatedTensorError):
        decode_tensor(data[:-1])


@pytest.mark.parametrize("cut", [0, 3, 5, 7])
def test_truncated_header_raises(cut):
    data = encode_tensor(np.ones((2, 2)))
    with pytest.raises(TruncatedTensorError):
        decode_tensor(data[:cut])


def test_bad_magic_and_version_are_distinct():
    data = bytearray(encode_tensor(np.ones(3)))
    bad = bytes(b"NOPE" + data[4:])
    with pytest.raises(BadMagicError):
        decode_tensor(bad)
    data[4] = 2
    with pytest.raises(UnsupportedVersionError):
        decode_tensor(bytes(data))
    assert issubclass(BadMagicError, TensorFormatError)
    assert not issubclass(BadMagicError, UnsupportedVersionError)


def test_trailing_bytes_rejected():
    with pytest.raises(TensorFormatError):
        decode_tensor(encode_tensor(np.ones(2)) + b"\x00")


@pytest.mark.parametrize("ndim", [0, 5])
def test_ndim_out_of_range(ndim):
    with pytest.raises(ValueError):
        encode_tensor(np.zeros((1,) * ndim))
    header = b"PRLE" + bytes([1, ndim]) + b"\x01\x00\x00\x00" * ndim
    with pytest.raises(TensorFormatError):
        decode_tensor(header + b"\x00" * 4)


def test_read_returns_float32(tmp_path):
    write_tensor(tmp_path / "x.prle", np.array([1.0, 2.0]))
    assert read_tensor(tmp_path / "x.prle").dtype == np.float32


def test_params_roundtrip(tmp_path):
    p = DetectorParams.init(3, seed=4, input_side=8)
    save_params(tmp_path / "p", p)
    q = load_params(tmp_path / "p")
    # parameters pass through 32-bit storage
    assert np.array_equal(q.conv_weights, p.conv_weights.astype(np.float32))
    assert q.linear_bias == float(np.float32(p.linear_bias))
    assert q.input_side == 8


# ---- PNG


def test_black_png_reads_as_zero(tmp_path):
    Image.fromarray(np.zeros((4, 5), np.uint8), mode="L").save(tmp_path / "b.png")
    img = read_image_png(tmp_path / "b.png")
    assert img.shape == (4, 5) and not img.any()


def test_mask_png_pixels(tmp_path):
    write_mask_png(tmp_path / "m.png", [[0, 1], [1, 1]])
    with Image.open(tmp_path / "m.png") as im:
        assert im.mode == "L"
        assert np.asarray(im).tolist() == [[0, 255], [255, 255]]
    assert read_mask_png(tmp_path / "m.png").tolist() == [[0, 1], [1, 1]]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(0, 1)))
def test_png_quantisation_bound(tmp_path_factory, image):
    path = tmp_path_factory.mktemp("png") / "i.png"
    write_image_png(path, image)
    assert np.max(np.abs(read_image_png(path) - image)) <= 1 / 510 + 1e-15


def test_write_rounds_to_nearest(tmp_path):
    # 0.5/255 sits exactly on a rounding boundary and rounds up
    write_image_png(tmp_path / "r.png", np.array([[0.0, 0.5 / 255, 1.0, 0.2]]))
    with Image.open(tmp_path / "r.png") as im:
        assert np.asarray(im).tolist() == [[0, 1, 255, 51]]


def test_rgb_roundtrip(tmp_path):
    rgb = np.random.default_rng(1).integers(0, 256, (3, 4, 3)).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
    img = read_image_png(tmp_path / "c.png")
    assert img.shape == (3, 4, 3)
    write_image_png(tmp_path / "d.png", img)
    with Image.open(tmp_path / "d.png") as im:
        assert np.array_equal(np.asarray(im), rgb)


@pytest.mark.parametrize("mode", ["I;16", "RGBA", "1"])
def test_unsupported_modes_rejected(tmp_path, mode):
    Image.new(mode, (3, 3)).save(tmp_path / "x.png")
    with pytest.raises(ImageFormatError):
        read_image_png(tmp_path / "x.png")


def test_non_png_rejected(tmp_path):
    Image.new("L", (3, 3)).save(tmp_path / "x.bmp", format="BMP")
    with pytest.raises(ImageFormatError):
        read_image_png(tmp_path / "x.bmp")
