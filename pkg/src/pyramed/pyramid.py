"""Multi-resolution pyramid construction and tile split/stitch.

Images are (H, W, 3) float32 arrays with values in [0, 1]. A pyramid is one
resized copy of the source per scale; every scaled copy whose side is a
multiple of the base side can be split into base-sized square tiles and
stitched back bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InconsistentGridError,
    NonDivisibleSideError,
    NonSquareError,
)

DEFAULT_BASE = 378
DEFAULT_SCALES = (378, 756, 1134)


@dataclass(frozen=True)
class ScaleSet:
    """Base tile side plus the ascending list of pyramid sides.

    Every scale must be an exact integer multiple of the base and the first
    scale must equal the base.
    """

    base: int = DEFAULT_BASE
    scales: tuple[int, ...] = DEFAULT_SCALES

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if self.base < 1:
            raise ValueError(f"base must be >= 1, got {self.base}")
        if not self.scales:
            raise ValueError("scales must be non-empty")
        if self.scales[0] != self.base:
            raise ValueError(f"scales[0] must equal base {self.base}, got {self.scales[0]}")
        for prev, cur in zip(self.scales, self.scales[1:]):
            if cur <= prev:
                raise ValueError(f"scales must be strictly increasing, got {self.scales}")
        for s in self.scales:
            if s % self.base != 0:
                raise ValueError(f"scale {s} is not a multiple of base {self.base}")


@dataclass
class TileGrid:
    """Row-major grid of square tiles cut from one scaled image."""

    rows: int
    cols: int
    tile_side: int
    tiles: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        if len(self.tiles) != self.rows * self.cols:
            raise InconsistentGridError(
                f"expected {self.rows * self.cols} tiles, got {len(self.tiles)}"
            )


def as_image(img: np.ndarray) -> np.ndarray:
    """Coerce to a C-contiguous (H, W, 3) float32 array."""
    arr = np.ascontiguousarray(img, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got shape {arr.shape}")
    return arr


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers.

    Source coordinate for output column dx is (dx + 0.5) * (W_src / W_dst) - 0.5,
    clamped to [0, W_src - 1]; rows analogous; channels independent. The lerp
    form a + t*(b - a) keeps every output inside [min, max] of its four
    neighbours, and a same-size resize is bit-identical to the input.
    """
    src = as_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    h, w = src.shape[:2]

    ry = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1)
    rx = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1)
    y0 = np.floor(ry).astype(np.intp)
    x0 = np.floor(rx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ry - y0).astype(np.float32)[:, None, None]
    fx = (rx - x0).astype(np.float32)[None, :, None]

    r0 = src[y0]
    r1 = src[y1]
    top = r0[:, x0]
    top = top + fx * (r0[:, x1] - top)
    bot = r1[:, x0]
    bot = bot + fx * (r1[:, x1] - bot)
    return (top + fy * (bot - top)).astype(np.float32)


def split_tiles(img: np.ndarray, base: int) -> TileGrid:
    """Cut a square image into base-sized tiles, row-major.

    Tile (i, j) covers rows [i*base, (i+1)*base) and cols [j*base, (j+1)*base).
    """
    arr = as_image(img)
    h, w = arr.shape[:2]
    if h != w:
        raise NonSquareError(f"image must be square, got {h}x{w}")
    if h % base != 0:
        raise NonDivisibleSideError(f"side {h} is not a multiple of base {base}")
    n = h // base
    tiles = [
        arr[i * base:(i + 1) * base, j * base:(j + 1) * base].copy()
        for i in range(n)
        for j in range(n)
    ]
    return TileGrid(rows=n, cols=n, tile_side=base, tiles=tiles)


def stitch_tiles(grid: TileGrid) -> np.ndarray:
    """Exact inverse of split_tiles."""
    side = grid.tile_side
    for k, t in enumerate(grid.tiles):
        if t.shape != (side, side, 3):
            raise InconsistentGridError(
                f"tile {k} has shape {t.shape}, expected ({side}, {side}, 3)"
            )
    out = np.empty((grid.rows * side, grid.cols * side, 3), dtype=np.float32)
    for i in range(grid.rows):
        for j in range(grid.cols):
            out[i * side:(i + 1) * side, j * side:(j + 1) * side] = grid.tiles[i * grid.cols + j]
    return out


def build_pyramid(img: np.ndarray, scale_set: ScaleSet) -> list[np.ndarray]:
    """One resized copy per scale, each resampled from the original image.

    Levels are never chained (1134 comes from the source, not from the 756
    level) so interpolation error does not compound.
    """
    arr = as_image(img)
    h, w = arr.shape[:2]
    if h != w:
        raise NonSquareError(
            f"pyramid input must be square (use prepare_square first), got {h}x{w}"
        )
    return [resize_bilinear(arr, s, s) for s in scale_set.scales]


def pad_to_square(img: np.ndarray) -> np.ndarray:
    """Zero-pad the shorter axis symmetrically to a square.

    An odd padding total puts the extra row/column on the bottom/right.
    """
    arr = as_image(img)
    h, w = arr.shape[:2]
    if h == w:
        return arr
    side = max(h, w)
    out = np.zeros((side, side, 3), dtype=np.float32)
    top = (side - h) // 2
    left = (side - w) // 2
    out[top:top + h, left:left + w] = arr
    return out


def prepare_square(img: np.ndarray, base: int) -> np.ndarray:
    """Pad to square then resize to base x base. Square inputs skip padding."""
    return resize_bilinear(pad_to_square(img), base, base)
