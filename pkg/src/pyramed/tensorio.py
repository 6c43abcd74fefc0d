"""Bit-exact tensor serialization (.mstf) and image ingestion.

MSTF v1 layout, little-endian throughout:

    offset  size            content
    0       4               magic "MSTF" (ASCII)
    4       1               version, 0x01
    5       1               dtype, 0x01 = float32 little-endian
    6       1               ndim, 1..4
    7       1               reserved, 0x00
    8       4*ndim          dims, unsigned 32-bit each
    ...     4*prod(dims)    payload, float32 values, row-major (last dim fastest)

Total size is always 8 + 4*ndim + 4*prod(dims) bytes. v1 carries float32
only; there is no compression.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    LengthMismatchError,
    MalformedHeaderError,
    UnsupportedVersionError,
)

MAGIC = b"MSTF"
VERSION = 1
DTYPE_F32 = 1
MAX_NDIM = 4

HEADER = struct.Struct("<4sBBBB")


def _check_dims(dims: tuple[int, ...]) -> None:
    if not 1 <= len(dims) <= MAX_NDIM:
        raise MalformedHeaderError(f"ndim must be 1..{MAX_NDIM}, got {len(dims)}")
    for d in dims:
        if d < 1:
            raise MalformedHeaderError(f"dims entries must be >= 1, got {d}")


def encode_mstf(tensor: np.ndarray) -> bytes:
    """Serialize a float32 tensor to MSTF bytes.

    The array is converted to C-contiguous little-endian float32; round-trip
    through decode_mstf is bit-exact.
    """
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    _check_dims(arr.shape)
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + arr.tobytes()


def decode_mstf(data: bytes) -> np.ndarray:
    """Inverse of encode_mstf. Returns a float32 array owning its memory.

    Raises MalformedHeaderError, UnsupportedVersionError, or
    LengthMismatchError; the message names the failing field.
    """
    if len(data) < HEADER.size:
        raise MalformedHeaderError(
            f"header: need at least {HEADER.size} bytes, got {len(data)}"
        )
    magic, version, dtype, ndim, reserved = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"magic: expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"version: expected {VERSION}, got {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedVersionError(f"dtype: expected {DTYPE_F32} (f32), got {dtype}")
    if not 1 <= ndim <= MAX_NDIM:
        raise MalformedHeaderError(f"ndim: must be 1..{MAX_NDIM}, got {ndim}")
    if reserved != 0:
        raise MalformedHeaderError(f"reserved: must be 0x00, got {reserved:#04x}")

    dims_end = HEADER.size + 4 * ndim
    if len(data) < dims_end:
        raise LengthMismatchError(
            f"dims: need {dims_end} bytes for header+dims, got {len(data)}"
        )
    dims = struct.unpack_from(f"<{ndim}I", data, HEADER.size)
    _check_dims(dims)

    count = int(np.prod(dims, dtype=np.int64))
    expected = dims_end + 4 * count
    if len(data) != expected:
        raise LengthMismatchError(
            f"payload: expected {expected} bytes total for dims {list(dims)}, got {len(data)}"
        )
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=dims_end)
    return flat.reshape(dims).copy()


def save_mstf(path: str | Path, tensor: np.ndarray) -> None:
    Path(path).write_bytes(encode_mstf(tensor))


def load_mstf(path: str | Path) -> np.ndarray:
    return decode_mstf(Path(path).read_bytes())


def load_image_rgb8(path: str | Path) -> np.ndarray:
    """Decode a PNG or JPEG file to an (H, W, 3) uint8 RGB array.

    Grayscale inputs are expanded to three identical channels. Raises
    DecodeError for files that are not decodable images.
    """
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


def image_to_float(pixels: np.ndarray) -> np.ndarray:
    """Map (H, W, 3) uint8 pixels to float32 in [0, 1]."""
    return (np.asarray(pixels, dtype=np.float32) / np.float32(255.0)).astype(np.float32)
