"""Color conversion, resampling, and block splitting contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedct import pixels
from sparsedct.pixels import YccPlanes, merge_blocks, rgb_to_ycc, split_blocks, ycc_to_rgb


def constant_image(r, g, b, h=8, w=8):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[:, :, 0], img[:, :, 1], img[:, :, 2] = r, g, b
    return img


def test_mid_gray_is_conversion_fixed_point():
    planes = rgb_to_ycc(constant_image(128, 128, 128))
    assert np.allclose(planes.y, 0.0, atol=1e-12)
    assert np.allclose(planes.cb, 0.0, atol=1e-12)
    assert np.allclose(planes.cr, 0.0, atol=1e-12)


def test_pure_white():
    # 255*(0.299+0.587+0.114) - 128 = 127; chroma rows sum to zero.
    planes = rgb_to_ycc(constant_image(255, 255, 255))
    assert np.allclose(planes.y, 127.0)
    assert np.allclose(planes.cb, 0.0, atol=1e-12)
    assert np.allclose(planes.cr, 0.0, atol=1e-12)


def test_downsample_of_constant_cell_is_exact():
    img = constant_image(10, 200, 60, h=2, w=2)
    planes = rgb_to_ycc(img)
    r, g, b = 10.0, 200.0, 60.0
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b
    assert planes.cb.shape == (1, 1)
    assert np.isclose(planes.cb[0, 0], cb)
    assert np.isclose(planes.cr[0, 0], cr)


def test_odd_dimensions_use_ceil_chroma_shape():
    planes = rgb_to_ycc(np.zeros((5, 7, 3), dtype=np.uint8))
    assert planes.y.shape == (5, 7)
    assert planes.cb.shape == (3, 4)
    assert planes.cr.shape == (3, 4)


def test_zero_planes_decode_to_mid_gray():
    planes = YccPlanes(np.zeros((4, 4)), np.zeros((2, 2)), np.zeros((2, 2)))
    img = ycc_to_rgb(planes)
    assert np.all(img == 128)


def test_out_of_gamut_reconstruction_is_clamped():
    planes = YccPlanes(np.full((4, 4), 127.0), np.full((2, 2), 127.0), np.full((2, 2), 127.0))
    img = ycc_to_rgb(planes)
    assert img.dtype == np.uint8
    assert img.min() >= 0 and img.max() <= 255
    assert np.all(img[:, :, 0] == 255)  # R = 255 + 1.402*127 clamps


def test_round_trip_error_on_cell_constant_chroma():
    rng = np.random.default_rng(7)
    for _ in range(20):
        h, w = rng.integers(2, 17, size=2) * 2
        base = rng.integers(30, 221, size=(h // 2, w // 2, 3)).astype(np.float64)
        img = base.repeat(2, axis=0).repeat(2, axis=1)
        # Luma-only variation keeps chroma constant on every 2x2 cell.
        delta = rng.integers(-20, 21, size=(h, w, 1)).astype(np.float64)
        img = np.clip(img + delta, 0, 255).astype(np.uint8)
        out = ycc_to_rgb(rgb_to_ycc(img))
        err = np.abs(out.astype(np.int64) - img.astype(np.int64))
        assert err.max() <= 1


def test_ycc_values_always_in_range():
    rng = np.random.default_rng(11)
    imgs = [rng.integers(0, 256, size=(9, 13, 3)).astype(np.uint8)]
    # Saturated corner colors stress the chroma extremes.
    for color in [(0, 0, 255), (255, 0, 0), (0, 255, 0), (255, 0, 255)]:
        imgs.append(constant_image(*color))
    for img in imgs:
        planes = rgb_to_ycc(img)
        for plane in (planes.y, planes.cb, planes.cr):
            assert plane.min() >= -128.0 and plane.max() <= 127.0


def test_split_exact_division():
    grid = split_blocks(np.zeros((64, 64)), 8)
    assert grid.shape == (8, 8, 8, 8)


def test_split_pads_by_edge_replication():
    plane = np.arange(65 * 64, dtype=np.float64).reshape(65, 64)
    grid = split_blocks(plane, 8)
    assert grid.shape == (9, 8, 8, 8)
    # Rows 65..71 of the padded plane replicate row 64.
    assert np.all(grid[8, 0, 1:, :] == grid[8, 0, 0, :])


def test_unsupported_block_size_rejected():
    with pytest.raises(ValueError):
        split_blocks(np.zeros((8, 8)), 7)


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(min_value=1, max_value=40),
    w=st.integers(min_value=1, max_value=40),
    block=st.sampled_from([4, 8, 16]),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_merge_inverts_split(h, w, block, seed):
    rng = np.random.default_rng(seed)
    plane = rng.normal(size=(h, w))
    grid = split_blocks(plane, block)
    assert np.array_equal(merge_blocks(grid, h, w), plane)


def test_image_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(10, 12, 3)).astype(np.uint8)
    for name in ("img.png", "img.ppm"):
        path = tmp_path / name
        pixels.write_image(path, img)
        assert np.array_equal(pixels.read_image(path), img)
