"""Hierarchical multi-scale feature encoding.

A pluggable tile encoder turns a base-resolution square image into a
(g, g, dim) feature grid with g = side / patch. Scaled-up pyramid levels are
split into base tiles, encoded per tile, reassembled into one large grid,
average-pooled back to g x g, and the per-scale grids are concatenated
channel-wise in ascending scale order.

Reference encoder kinds:

* ``patch_mean``    — per-channel mean of each patch (dim is forced to 3).
* ``seeded_linear`` — each patch flattened row-major (channels fastest) to a
  3*p*p vector and multiplied by a fixed random matrix of shape
  (3*p*p, dim). Matrix entries are uniform in [-1, 1], drawn in row-major
  order from numpy's PCG64 generator seeded with ``seed``, so results are
  reproducible across runs and platforms.
* ``precomputed``   — features come from an .mstf file via
  load_precomputed_features; encode_tile rejects this kind.

Both reference encoders are linear and patch-local, so encoding a scaled
image tile-by-tile is numerically equivalent to encoding it whole. Feature
arithmetic runs in float64 and results are stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import NonDivisibleGridError, ShapeMismatchError, SpecMismatchError
from .pyramid import ScaleSet, as_image, build_pyramid, split_tiles
from .tensorio import load_mstf

EncoderKind = Literal["patch_mean", "seeded_linear", "precomputed"]

KINDS = ("patch_mean", "seeded_linear", "precomputed")


@dataclass(frozen=True)
class EncoderSpec:
    kind: EncoderKind
    patch: int
    dim: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}, expected one of {KINDS}")
        if self.patch < 1:
            raise ValueError(f"patch must be >= 1, got {self.patch}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.kind == "patch_mean" and self.dim != 3:
            raise ValueError(f"patch_mean encoder requires dim == 3, got {self.dim}")


@dataclass
class MultiScaleFeatures:
    """Concatenated per-scale feature grids on the base g x g layout.

    values has shape (g, g, dim * len(scales)); channel block k (ascending
    scale order) holds the pooled features of scale_set.scales[k].
    """

    values: np.ndarray
    scale_set: ScaleSet
    dim: int

    @property
    def g(self) -> int:
        return self.values.shape[0]

    @property
    def dim_total(self) -> int:
        return self.values.shape[2]


@lru_cache(maxsize=32)
def _projection_matrix(patch: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=(3 * patch * patch, dim))


def _patches(tile: np.ndarray, patch: int) -> np.ndarray:
    """(g, g, p, p, 3) view-free reshape of a square image into patches."""
    side = tile.shape[0]
    g = side // patch
    return tile.reshape(g, patch, g, patch, 3).transpose(0, 2, 1, 3, 4)


def encode_tile(tile: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    """Encode one base-resolution square tile to a (g, g, dim) float32 grid."""
    arr = as_image(tile)
    h, w = arr.shape[:2]
    if h != w:
        raise SpecMismatchError(f"tile must be square, got {h}x{w}")
    if h % spec.patch != 0:
        raise SpecMismatchError(f"tile side {h} is not a multiple of patch {spec.patch}")
    if spec.kind == "precomputed":
        raise SpecMismatchError(
            "precomputed encoder has no pixel path; use load_precomputed_features"
        )

    blocks = _patches(arr.astype(np.float64), spec.patch)
    g = h // spec.patch
    if spec.kind == "patch_mean":
        out = blocks.mean(axis=(2, 3))
    else:  # seeded_linear
        flat = blocks.reshape(g * g, 3 * spec.patch * spec.patch)
        out = (flat @ _projection_matrix(spec.patch, spec.dim, spec.seed)).reshape(g, g, spec.dim)
    return out.astype(np.float32)


def encode_scale(scaled_img: np.ndarray, base: int, spec: EncoderSpec) -> np.ndarray:
    """Split a scaled image into base tiles, encode each, reassemble the grids.

    Tile (i, j)'s grid lands at block (i, j), so the output side is
    (side / base) * (base / patch) cells.
    """
    grid = split_tiles(scaled_img, base)
    g = base // spec.patch
    out = np.empty((grid.rows * g, grid.cols * g, spec.dim), dtype=np.float32)
    for i in range(grid.rows):
        for j in range(grid.cols):
            out[i * g:(i + 1) * g, j * g:(j + 1) * g] = encode_tile(
                grid.tiles[i * grid.cols + j], spec
            )
    return out


def pool_to_base(big: np.ndarray, g: int) -> np.ndarray:
    """Average-pool a (k*g, k*g, dim) grid to (g, g, dim) with k x k windows."""
    h, w = big.shape[:2]
    if h != w:
        raise NonDivisibleGridError(f"grid must be square, got {h}x{w}")
    if h % g != 0:
        raise NonDivisibleGridError(f"grid side {h} is not a multiple of {g}")
    k = h // g
    pooled = big.astype(np.float64).reshape(g, k, g, k, big.shape[2]).mean(axis=(1, 3))
    return pooled.astype(np.float32)


def encode_multiscale(
    img: np.ndarray, scale_set: ScaleSet, spec: EncoderSpec
) -> MultiScaleFeatures:
    """Full pipeline: pyramid -> per-scale tiled encoding -> pool -> concat.

    Output is (g, g, dim * |scales|) with g = base / patch; channel blocks are
    ordered by ascending scale.
    """
    if scale_set.base % spec.patch != 0:
        raise SpecMismatchError(
            f"base {scale_set.base} is not a multiple of patch {spec.patch}"
        )
    g = scale_set.base // spec.patch
    levels = build_pyramid(img, scale_set)
    pooled = [
        pool_to_base(encode_scale(level, scale_set.base, spec), g) for level in levels
    ]
    values = np.concatenate(pooled, axis=2)
    return MultiScaleFeatures(values=values, scale_set=scale_set, dim=spec.dim)


def load_precomputed_features(
    path: str | Path, expected: tuple[int, int, int]
) -> np.ndarray:
    """Load an externally computed (h, w, dim) feature grid from an .mstf file."""
    arr = load_mstf(path)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{path}: expected 3 dims [h, w, dim], got {arr.ndim}")
    if arr.shape != tuple(expected):
        raise ShapeMismatchError(
            f"{path}: expected shape {tuple(expected)}, got {arr.shape}"
        )
    return arr
