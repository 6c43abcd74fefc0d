import numpy as np
import pytest

import pyramed.encoder as enc
from pyramed.encoder import (
    EncoderSpec,
    encode_multiscale,
    encode_scale,
    encode_tile,
    load_precomputed_features,
    pool_to_base,
)
from pyramed.errors import NonDivisibleGridError, ShapeMismatchError, SpecMismatchError
from pyramed.pyramid import ScaleSet
from pyramed.tensorio import save_mstf

from helpers import patch_mean_whole, seeded_linear_whole


def random_image(rng, side):
    return rng.random((side, side, 3), dtype=np.float32)


# --- EncoderSpec ----------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        EncoderSpec(kind="patch_mean", patch=14, dim=8)  # patch_mean forces dim 3
    with pytest.raises(ValueError):
        EncoderSpec(kind="nope", patch=14, dim=3)
    with pytest.raises(ValueError):
        EncoderSpec(kind="seeded_linear", patch=0, dim=4)


# --- encode_tile -------------------------------------------------------------------


def test_patch_mean_constant_tile():
    spec = EncoderSpec(kind="patch_mean", patch=7, dim=3)
    tile = np.full((28, 28, 3), 0.5, dtype=np.float32)
    grid = encode_tile(tile, spec)
    assert grid.shape == (4, 4, 3)
    assert np.all(grid == np.float32(0.5))


def test_patch_14_on_378_gives_27x27():
    spec = EncoderSpec(kind="patch_mean", patch=14, dim=3)
    rng = np.random.default_rng(0)
    grid = encode_tile(random_image(rng, 378), spec)
    assert grid.shape == (27, 27, 3)


def test_seeded_linear_is_deterministic():
    spec = EncoderSpec(kind="seeded_linear", patch=4, dim=8, seed=123)
    rng = np.random.default_rng(1)
    tile = random_image(rng, 16)
    a = encode_tile(tile, spec)
    b = encode_tile(tile.copy(), spec)
    assert a.tobytes() == b.tobytes()
    other = encode_tile(tile, EncoderSpec(kind="seeded_linear", patch=4, dim=8, seed=124))
    assert a.tobytes() != other.tobytes()


def test_encode_tile_rejects_bad_inputs():
    spec = EncoderSpec(kind="patch_mean", patch=4, dim=3)
    with pytest.raises(SpecMismatchError):
        encode_tile(np.zeros((8, 12, 3), dtype=np.float32), spec)  # not square
    with pytest.raises(SpecMismatchError):
        encode_tile(np.zeros((10, 10, 3), dtype=np.float32), spec)  # 10 % 4 != 0
    with pytest.raises(SpecMismatchError):
        encode_tile(
            np.zeros((8, 8, 3), dtype=np.float32),
            EncoderSpec(kind="precomputed", patch=4, dim=3),
        )


def test_patch_mean_matches_loop_oracle():
    spec = EncoderSpec(kind="patch_mean", patch=5, dim=3)
    rng = np.random.default_rng(2)
    tile = random_image(rng, 20)
    np.testing.assert_allclose(encode_tile(tile, spec), patch_mean_whole(tile, 5), atol=1e-6)


def test_seeded_linear_matches_loop_oracle():
    spec = EncoderSpec(kind="seeded_linear", patch=5, dim=6, seed=42)
    rng = np.random.default_rng(3)
    tile = random_image(rng, 20)
    np.testing.assert_allclose(
        encode_tile(tile, spec), seeded_linear_whole(tile, 5, 6, 42), atol=1e-5
    )


# --- encode_scale ------------------------------------------------------------------------


def test_encode_scale_at_base_equals_encode_tile():
    spec = EncoderSpec(kind="patch_mean", patch=4, dim=3)
    rng = np.random.default_rng(4)
    img = random_image(rng, 16)
    assert np.array_equal(encode_scale(img, 16, spec), encode_tile(img, spec))


def test_encode_scale_1134_gives_81x81():
    spec = EncoderSpec(kind="patch_mean", patch=14, dim=3)
    rng = np.random.default_rng(5)
    grid = encode_scale(random_image(rng, 1134), 378, spec)
    assert grid.shape == (81, 81, 3)


@pytest.mark.parametrize("kind,dim", [("patch_mean", 3), ("seeded_linear", 5)])
def test_tiling_equivalence_against_whole_image_oracle(kind, dim):
    spec = EncoderSpec(kind=kind, patch=4, dim=dim, seed=7)
    rng = np.random.default_rng(6)
    for side, base in [(16, 16), (32, 16), (48, 16)]:
        img = random_image(rng, side)
        tiled = encode_scale(img, base, spec)
        whole = (
            patch_mean_whole(img, 4)
            if kind == "patch_mean"
            else seeded_linear_whole(img, 4, dim, 7)
        )
        np.testing.assert_allclose(tiled, whole, atol=1e-5)


# --- pool_to_base -------------------------------------------------------------------------


def test_pool_k1_is_identity():
    rng = np.random.default_rng(7)
    grid = rng.random((6, 6, 4), dtype=np.float32)
    assert np.array_equal(pool_to_base(grid, 6), grid)


def test_pool_2x2_mean():
    grid = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)[:, :, None]
    pooled = pool_to_base(grid, 1)
    assert pooled.shape == (1, 1, 1)
    assert pooled[0, 0, 0] == np.float32(2.5)


def test_pool_preserves_global_mean():
    rng = np.random.default_rng(8)
    grid = rng.random((12, 12, 3), dtype=np.float32)
    pooled = pool_to_base(grid, 4)
    # direct summation oracle per channel
    for c in range(3):
        direct = float(np.sum(grid[:, :, c], dtype=np.float64)) / grid[:, :, c].size
        assert abs(float(pooled[:, :, c].astype(np.float64).mean()) - direct) < 1e-6


def test_pool_rejects_non_divisible():
    with pytest.raises(NonDivisibleGridError):
        pool_to_base(np.zeros((9, 9, 2), dtype=np.float32), 4)
    with pytest.raises(NonDivisibleGridError):
        pool_to_base(np.zeros((8, 9, 2), dtype=np.float32), 4)


# --- encode_multiscale ----------------------------------------------------------------------


def test_multiscale_shape_law():
    scale_set = ScaleSet(base=16, scales=(16, 32, 48))
    spec = EncoderSpec(kind="seeded_linear", patch=4, dim=5, seed=0)
    rng = np.random.default_rng(9)
    ms = encode_multiscale(random_image(rng, 16), scale_set, spec)
    assert ms.values.shape == (4, 4, 15)
    assert ms.g == 4
    assert ms.dim_total == 15


def test_multiscale_constant_image_patch_mean():
    scale_set = ScaleSet(base=8, scales=(8, 16, 24))
    spec = EncoderSpec(kind="patch_mean", patch=4, dim=3)
    ms = encode_multiscale(np.full((8, 8, 3), 0.625, dtype=np.float32), scale_set, spec)
    assert ms.values.shape == (2, 2, 9)
    assert np.all(ms.values == np.float32(0.625))


def test_single_scale_equals_encode_tile():
    scale_set = ScaleSet(base=12, scales=(12,))
    spec = EncoderSpec(kind="patch_mean", patch=3, dim=3)
    rng = np.random.default_rng(10)
    img = random_image(rng, 12)
    ms = encode_multiscale(img, scale_set, spec)
    assert np.array_equal(ms.values, encode_tile(img, spec))


def test_channel_block_identity():
    from pyramed.pyramid import resize_bilinear

    scale_set = ScaleSet(base=8, scales=(8, 16, 24))
    spec = EncoderSpec(kind="seeded_linear", patch=4, dim=6, seed=11)
    rng = np.random.default_rng(11)
    img = random_image(rng, 8)
    ms = encode_multiscale(img, scale_set, spec)
    g = scale_set.base // spec.patch
    for k, scale in enumerate(scale_set.scales):
        level = resize_bilinear(img, scale, scale)
        single = pool_to_base(encode_scale(level, scale_set.base, spec), g)
        block = ms.values[:, :, k * spec.dim:(k + 1) * spec.dim]
        assert np.array_equal(block, single)


def test_multiscale_determinism_across_runs():
    scale_set = ScaleSet(base=8, scales=(8, 16))
    spec = EncoderSpec(kind="seeded_linear", patch=2, dim=4, seed=3)
    rng = np.random.default_rng(12)
    img = random_image(rng, 8)
    a = encode_multiscale(img, scale_set, spec)
    b = encode_multiscale(img.copy(), scale_set, spec)
    assert a.values.tobytes() == b.values.tobytes()


def test_multiscale_rejects_patch_not_dividing_base():
    scale_set = ScaleSet(base=10, scales=(10,))
    spec = EncoderSpec(kind="patch_mean", patch=4, dim=3)
    with pytest.raises(SpecMismatchError):
        encode_multiscale(np.zeros((10, 10, 3), dtype=np.float32), scale_set, spec)


# --- load_precomputed_features ---------------------------------------------------------------


def test_precomputed_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    grid = rng.random((27, 27, 8), dtype=np.float32)
    path = tmp_path / "feat.mstf"
    save_mstf(path, grid)
    loaded = load_precomputed_features(path, (27, 27, 8))
    assert np.array_equal(loaded, grid)


def test_precomputed_shape_mismatch(tmp_path):
    path = tmp_path / "feat.mstf"
    save_mstf(path, np.zeros((27, 27, 8), dtype=np.float32))
    with pytest.raises(ShapeMismatchError):
        load_precomputed_features(path, (27, 27, 16))
    save_mstf(path, np.zeros((27, 27), dtype=np.float32))
    with pytest.raises(ShapeMismatchError):
        load_precomputed_features(path, (27, 27, 8))


def test_projection_matrix_row_major_generation():
    # entries must come out of PCG64(seed).uniform in C order
    expected = np.random.Generator(np.random.PCG64(99)).uniform(-1, 1, size=(12, 2))
    got = enc._projection_matrix(2, 2, 99)
    assert np.array_equal(got, expected)
