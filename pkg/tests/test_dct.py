"""Block transform and quantization contracts.

The forward transform is checked against an independent direct double-sum
oracle (no separability, no shared basis matrix).
"""

import math

import numpy as np
import pytest

from sparsedct.dct import (
    BASE_CHROMA,
    BASE_LUMA,
    dct2,
    dequantize,
    idct2,
    quant_matrix,
    quantize,
)

BLOCK_SIZES = [4, 8, 16, 32]


def dct2_direct(block):
    """O(B^4) evaluation of the orthonormal 2D transform, one (u,v) at a time."""
    b = block.shape[0]
    x = np.arange(b, dtype=np.float64)
    out = np.empty((b, b), dtype=np.float64)
    for u in range(b):
        au = 1.0 / math.sqrt(2.0) if u == 0 else 1.0
        cu = np.cos((2 * x + 1) * u * math.pi / (2 * b))
        for v in range(b):
            av = 1.0 / math.sqrt(2.0) if v == 0 else 1.0
            cv = np.cos((2 * x + 1) * v * math.pi / (2 * b))
            out[u, v] = (2.0 / b) * au * av * np.sum(block * cu[:, None] * cv[None, :])
    return out


def idct2_direct(coeffs):
    """Direct inverse: sum of basis patterns weighted by coefficients."""
    b = coeffs.shape[0]
    x = np.arange(b, dtype=np.float64)
    out = np.zeros((b, b), dtype=np.float64)
    for u in range(b):
        au = 1.0 / math.sqrt(2.0) if u == 0 else 1.0
        cu = np.cos((2 * x + 1) * u * math.pi / (2 * b))
        for v in range(b):
            av = 1.0 / math.sqrt(2.0) if v == 0 else 1.0
            cv = np.cos((2 * x + 1) * v * math.pi / (2 * b))
            out += (2.0 / b) * au * av * coeffs[u, v] * cu[:, None] * cv[None, :]
    return out


def test_constant_block_concentrates_in_dc():
    coeffs = dct2(np.full((8, 8), 4.0))
    assert np.isclose(coeffs[0, 0], 32.0)
    off = coeffs.copy()
    off[0, 0] = 0.0
    assert np.allclose(off, 0.0, atol=1e-12)


def test_zero_block():
    assert np.allclose(dct2(np.zeros((8, 8))), 0.0)


@pytest.mark.parametrize("block_size", BLOCK_SIZES)
def test_matches_direct_oracle(block_size):
    rng = np.random.default_rng(block_size)
    block = rng.uniform(-128, 128, size=(block_size, block_size))
    assert np.allclose(dct2(block), dct2_direct(block), atol=1e-9)


@pytest.mark.parametrize("block_size", BLOCK_SIZES)
def test_parseval_energy_equality(block_size):
    rng = np.random.default_rng(100 + block_size)
    for _ in range(20):
        block = rng.uniform(-128, 128, size=(block_size, block_size))
        coeffs = dct2(block)
        assert np.isclose(np.sum(coeffs**2), np.sum(block**2), rtol=1e-9)


@pytest.mark.parametrize("block_size", BLOCK_SIZES)
def test_inverse_round_trip(block_size):
    rng = np.random.default_rng(200 + block_size)
    blocks = rng.uniform(-128, 128, size=(50, block_size, block_size))
    assert np.abs(idct2(dct2(blocks)) - blocks).max() <= 1e-9


def test_dc_only_inverse_is_constant():
    coeffs = np.zeros((8, 8))
    coeffs[0, 0] = 32.0
    assert np.allclose(idct2(coeffs), 4.0)


def test_single_ac_coefficient_pattern():
    coeffs = np.zeros((8, 8))
    coeffs[0, 1] = 1.0
    assert np.allclose(idct2(coeffs), idct2_direct(coeffs), atol=1e-12)
    block = idct2(coeffs)
    # Constant along axis 0, cosine pattern along axis 1.
    assert np.allclose(block, block[0:1, :])


def test_linearity():
    rng = np.random.default_rng(5)
    p1 = rng.normal(size=(8, 8))
    p2 = rng.normal(size=(8, 8))
    lhs = dct2(2.5 * p1 - 1.25 * p2)
    rhs = 2.5 * dct2(p1) - 1.25 * dct2(p2)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_quality_50_returns_base_tables():
    assert np.array_equal(quant_matrix(50, "luma", 8), BASE_LUMA)
    assert np.array_equal(quant_matrix(50, "chroma", 8), BASE_CHROMA)


def test_quality_10_dc_entry():
    assert quant_matrix(10, "luma", 8)[0, 0] == 80


def test_quality_100_is_all_ones():
    assert np.all(quant_matrix(100, "luma", 8) == 1)
    assert np.all(quant_matrix(100, "chroma", 8) == 1)


def test_quant_matrix_monotone_in_quality():
    prev = quant_matrix(1, "luma", 8)
    for q in range(2, 101):
        cur = quant_matrix(q, "luma", 8)
        assert np.all(cur <= prev)
        prev = cur


def test_nearest_resize_replicates_for_double_size():
    q16 = quant_matrix(50, "luma", 16)
    for i in range(16):
        for j in range(16):
            assert q16[i, j] == BASE_LUMA[i // 2, j // 2]


def test_quant_matrix_rejects_bad_args():
    with pytest.raises(ValueError):
        quant_matrix(0, "luma", 8)
    with pytest.raises(ValueError):
        quant_matrix(101, "luma", 8)
    with pytest.raises(ValueError):
        quant_matrix(50, "luma", 6)
    with pytest.raises(ValueError):
        quant_matrix(50, "green", 8)


def test_quantize_rounding_and_clamp():
    q = np.array([[16.0]])
    assert quantize(np.array([[17.0]]), q, 1200)[0, 0] == 1
    assert quantize(np.array([[-24.0]]), q, 1200)[0, 0] == -2  # half away from zero
    assert quantize(np.array([[100000.0]]), np.array([[1.0]]), 1200)[0, 0] == 1200


def test_dequantize_basic():
    q = np.array([[16]])
    assert dequantize(np.array([[1]]), q)[0, 0] == 16.0
    assert dequantize(np.array([[0]]), q)[0, 0] == 0.0


def test_quantization_error_bounded_by_half_step():
    rng = np.random.default_rng(9)
    qmat = quant_matrix(50, "luma", 8)
    for _ in range(50):
        block = rng.uniform(-128, 128, size=(8, 8))
        coeffs = dct2(block)
        ints = quantize(coeffs, qmat, 10**9)  # huge clip: no clamping
        err = np.abs(dequantize(ints, qmat) - coeffs)
        assert np.all(err <= qmat / 2 + 1e-9)
