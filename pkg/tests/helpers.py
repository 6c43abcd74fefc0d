"""Shared test helpers: independent oracles and fixture builders.

Everything here is deliberately implemented without going through the
library code paths it is used to check: the PNG writer emits chunks by hand
(never through Pillow), the whole-image encoders never tile, and the MLP
forward oracle is scalar loops over math.erf.
"""

from __future__ import annotations

import math
import struct
import zlib

import httpx
import numpy as np


def _chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
    )


def make_png(pixels: np.ndarray) -> bytes:
    """Minimal PNG encoder: 8-bit grayscale (H, W) or RGB (H, W, 3), filter 0."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim == 2:
        color_type = 0
        h, w = arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type = 2
        h, w = arr.shape[:2]
    else:
        raise ValueError(f"unsupported pixel shape {arr.shape}")
    raw = b"".join(b"\x00" + arr[i].tobytes() for i in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw))
        + _chunk(b"IEND", b"")
    )


def resize_bilinear_oracle(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Scalar evaluation of the half-pixel-center formula, float64."""
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape[:2]
    out = np.zeros((out_h, out_w, src.shape[2]))
    for dy in range(out_h):
        sy = min(max((dy + 0.5) * (h / out_h) - 0.5, 0.0), h - 1)
        y0 = math.floor(sy)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for dx in range(out_w):
            sx = min(max((dx + 0.5) * (w / out_w) - 0.5, 0.0), w - 1)
            x0 = math.floor(sx)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for c in range(src.shape[2]):
                top = src[y0, x0, c] + fx * (src[y0, x1, c] - src[y0, x0, c])
                bot = src[y1, x0, c] + fx * (src[y1, x1, c] - src[y1, x0, c])
                out[dy, dx, c] = top + fy * (bot - top)
    return out


def patch_mean_whole(img: np.ndarray, patch: int) -> np.ndarray:
    """Patch means over the whole image, explicit loops, no tiling."""
    src = np.asarray(img, dtype=np.float64)
    g = src.shape[0] // patch
    out = np.empty((g, g, 3))
    for i in range(g):
        for j in range(g):
            block = src[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch]
            out[i, j] = block.mean(axis=(0, 1))
    return out.astype(np.float32)


def seeded_linear_whole(img: np.ndarray, patch: int, dim: int, seed: int) -> np.ndarray:
    """Whole-image linear patch encoding with an independently drawn matrix."""
    mat = np.random.Generator(np.random.PCG64(seed)).uniform(
        -1.0, 1.0, size=(3 * patch * patch, dim)
    )
    src = np.asarray(img, dtype=np.float64)
    g = src.shape[0] // patch
    out = np.empty((g, g, dim))
    for i in range(g):
        for j in range(g):
            flat = src[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch, :].reshape(-1)
            out[i, j] = flat @ mat
    return out.astype(np.float32)


def mlp_forward_oracle(x: np.ndarray, params) -> np.ndarray:
    """Scalar-loop MLP forward with exact-erf GELU."""
    x = np.asarray(x, dtype=np.float64)
    n, d_in = x.shape
    hidden = params.w1.shape[1]
    d_out = params.w2.shape[1]
    out = np.zeros((n, d_out))
    for r in range(n):
        hid = np.zeros(hidden)
        for k in range(hidden):
            z = sum(x[r, d] * params.w1[d, k] for d in range(d_in)) + params.b1[k]
            hid[k] = 0.5 * z * (1.0 + math.erf(z / math.sqrt(2.0)))
        for c in range(d_out):
            out[r, c] = sum(hid[k] * params.w2[k, c] for k in range(hidden)) + params.b2[c]
    return out


# Example generated conversation used by the parser golden tests.
SAMPLE_GENERATION = """User: <image>
What is the location of the extraskeletal mass?
Assistant: The extraskeletal mass is located at the distal femur, which is the lower end of the thigh bone near the knee joint.
User: What are the arrows pointing to?
Assistant: The black arrow is pointing to the extraskeletal mass of the distal femur, while the other arrow is pointing to a lesion that is thought to be hemorrhage and dissemination of tumor tissues.
User: What can you say about the signal intensities on T1-weighted and T2-weighted images?
Assistant: The MRI revealed iso-signal intensity on T1-weighted images and high-signal intensity on T2-weighted images of the left distal femur. Iso-signal intensity means that the signal intensity of the area of interest is similar to that of the surrounding tissue, while high-signal intensity indicates that the area of interest appears brighter compared to the surrounding tissue. These signal intensities can provide information about the nature of the tissue and help in identifying abnormalities, such as tumors or inflammation."""


def scripted_transport(statuses, ok_body):
    """MockTransport returning the given status sequence, then ok_body on 200.

    Returns (transport, calls) where calls["requests"] collects every request.
    """
    calls = {"requests": []}

    def handler(request: httpx.Request) -> httpx.Response:
        idx = len(calls["requests"])
        calls["requests"].append(request)
        status = statuses[min(idx, len(statuses) - 1)]
        if status == 200:
            return httpx.Response(200, json=ok_body)
        return httpx.Response(status, json={"error": f"status {status}"})

    return httpx.MockTransport(handler), calls
