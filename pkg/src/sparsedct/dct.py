"""Orthonormal block DCT and quality-parameterized quantization.

The 2D transform uses the scale (2/B)*alpha(u)*alpha(v), alpha(0)=1/sqrt(2),
which is orthonormal for every block size (and equals the familiar 1/4
factor at B=8). Forward and inverse are separable passes with a cached
basis matrix in double precision.
"""

from functools import lru_cache

import numpy as np

from .pixels import SUPPORTED_BLOCK_SIZES

BASE_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

BASE_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


@lru_cache(maxsize=None)
def dct_basis(block_size: int) -> np.ndarray:
    """Orthonormal 1D DCT-II basis M with M[u, x] = sqrt(2/B)*alpha(u)*cos(...)."""
    b = block_size
    x = np.arange(b)
    u = np.arange(b)[:, None]
    m = np.sqrt(2.0 / b) * np.cos((2 * x + 1) * u * np.pi / (2 * b))
    m[0, :] *= 1.0 / np.sqrt(2.0)
    return m


def dct2(blocks: np.ndarray) -> np.ndarray:
    """Forward 2D DCT over the trailing two axes of a [..., B, B] array."""
    m = dct_basis(blocks.shape[-1])
    return np.einsum("ux,...xy,vy->...uv", m, blocks.astype(np.float64), m)


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse 2D DCT over the trailing two axes; exact inverse of dct2."""
    m = dct_basis(coeffs.shape[-1])
    return np.einsum("xu,...uv,yv->...xy", m.T, coeffs.astype(np.float64), m.T)


def quality_scale(quality: int) -> float:
    """Quality-to-scale mapping: 5000/q below 50, 200-2q otherwise."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    if quality < 50:
        return 5000.0 / quality
    return float(200 - 2 * quality)


def _resize_nearest(table: np.ndarray, block_size: int) -> np.ndarray:
    idx = (np.arange(block_size) * table.shape[0]) // block_size
    return table[np.ix_(idx, idx)]


def quant_matrix(quality: int, kind: str, block_size: int) -> np.ndarray:
    """Quantization divisors for the given quality, plane kind, and block size.

    The 8x8 base table (luma or chroma) is nearest-neighbor resized to
    BxB, scaled by quality, floored, and clamped to at least 1.
    """
    if block_size not in SUPPORTED_BLOCK_SIZES:
        raise ValueError(f"unsupported block size {block_size}")
    if kind == "luma":
        base = BASE_LUMA
    elif kind == "chroma":
        base = BASE_CHROMA
    else:
        raise ValueError(f"kind must be 'luma' or 'chroma', got {kind!r}")
    s = quality_scale(quality)
    table = _resize_nearest(base, block_size)
    q = np.floor((s * table + 50.0) / 100.0).astype(np.int64)
    return np.maximum(q, 1)


def quantize(coeffs: np.ndarray, qmat: np.ndarray, clip: int) -> np.ndarray:
    """Divide by the quant matrix, round half away from zero, clamp to +-clip."""
    scaled = coeffs / qmat
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -clip, clip).astype(np.int64)


def dequantize(values: np.ndarray, qmat: np.ndarray) -> np.ndarray:
    """Elementwise multiply quantized integers back by the quant matrix."""
    return values.astype(np.float64) * qmat
