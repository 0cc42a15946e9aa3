"""Binary tensor files and PNG image I/O.

Tensor file layout (all little-endian)::

    b"PRLE"  magic
    u8       version (1)
    u8       ndim (1..4)
    u32*ndim dims
    f32*N    payload, row-major, N = prod(dims)
"""

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"PRLE"
VERSION = 1
_PAYLOAD = np.dtype("<f4")


class TensorFormatError(ValueError):
    """Malformed tensor file."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedTensorError(TensorFormatError):
    pass


class ImageFormatError(ValueError):
    pass


def encode_tensor(tensor):
    arr = np.asarray(tensor)
    if not 1 <= arr.ndim <= 4:
        raise ValueError(f"tensor must have 1 to 4 dimensions, got {arr.ndim}")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise ValueError("dimension exceeds the unsigned 32-bit range")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_PAYLOAD).tobytes()


def decode_tensor(data):
    if len(data) < 6:
        raise TruncatedTensorError("file shorter than the fixed header")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    version, ndim = data[4], data[5]
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if not 1 <= ndim <= 4:
        raise TensorFormatError(f"ndim must be 1..4, got {ndim}")
    end = 6 + 4 * ndim
    if len(data) < end:
        raise TruncatedTensorError("header truncated inside the dimension list")
    dims = struct.unpack(f"<{ndim}I", data[6:end])
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    payload = data[end:]
    if len(payload) < expected:
        raise TruncatedTensorError(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise TensorFormatError(f"{len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype=_PAYLOAD).reshape(dims).copy()


def write_tensor(path, tensor):
    Path(path).write_bytes(encode_tensor(tensor))


def read_tensor(path):
    """Tensor stored at path, as a float32 array."""
    return decode_tensor(Path(path).read_bytes())


def save_params(directory, params):
    """One tensor file per parameter field plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, value in params.tensors().items():
        write_tensor(directory / f"{name}.prle", value)
        entries.append({"name": name, "shape": list(value.shape), "file": f"{name}.prle"})
    manifest = {"input_side": params.input_side, "tensors": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_params(directory):
    from .detector import DetectorParams

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    values = {}
    for entry in manifest["tensors"]:
        arr = read_tensor(directory / entry["file"]).astype(np.float64)
        if list(arr.shape) != entry["shape"]:
            raise TensorFormatError(f"{entry['file']} shape {arr.shape} disagrees with manifest")
        values[entry["name"]] = arr
    return DetectorParams(
        values["conv_weights"],
        values["conv_bias"],
        values["linear_weights"],
        float(values["linear_bias"][0]),
        manifest["input_side"],
    )


def read_image_png(path):
    """8-bit grayscale (H, W) or RGB (H, W, 3) image scaled to [0, 1]."""
    with Image.open(path) as img:
        if img.format != "PNG":
            raise ImageFormatError(f"{path} is not a PNG file")
        if img.mode not in ("L", "RGB"):
            raise ImageFormatError(f"{path}: unsupported mode {img.mode!r}, need 8-bit L or RGB")
        arr = np.asarray(img, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def to_uint8(image):
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(image * 255.0 + 0.5).astype(np.uint8)


def write_image_png(path, image):
    arr = to_uint8(image)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"cannot write image of shape {arr.shape}")


def write_mask_png(path, mask):
    arr = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_mask_png(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)
