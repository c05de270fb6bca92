"""Pixel-domain operations: color conversion, chroma resampling, block splitting.

Planes are float64 arrays, zero-centered to [-128, 127]. Chroma planes are
half resolution (ceil division) with 2x2 mean downsampling and nearest
upsampling, matching a baseline JPEG-style pipeline.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

SUPPORTED_BLOCK_SIZES = (4, 8, 16, 32)

# Full-range BT.601 analysis coefficients (JFIF convention).
_KR, _KG, _KB = 0.299, 0.587, 0.114


@dataclass
class YccPlanes:
    """Zero-centered luma plane plus half-resolution chroma planes."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self):
        h, w = self.y.shape
        expect = ((h + 1) // 2, (w + 1) // 2)
        if self.cb.shape != expect or self.cr.shape != expect:
            raise ValueError(
                f"chroma planes must have shape {expect}, "
                f"got {self.cb.shape} and {self.cr.shape}"
            )


def _downsample2x(plane: np.ndarray) -> np.ndarray:
    """2x2 arithmetic mean; odd edges are edge-replicated first."""
    h, w = plane.shape
    padded = np.pad(plane, ((0, h % 2), (0, w % 2)), mode="edge")
    ph, pw = padded.shape
    return padded.reshape(ph // 2, 2, pw // 2, 2).mean(axis=(1, 3))


def _upsample2x(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest (2x2 replication) upsampling, cropped to the target size."""
    return plane.repeat(2, axis=0).repeat(2, axis=1)[:height, :width]


def rgb_to_ycc(img: np.ndarray) -> YccPlanes:
    """Convert an HxWx3 uint8 RGB image to zero-centered Y/Cb/Cr planes.

    Chroma is downsampled 2x in both dimensions. All outputs lie in
    [-128, 127]; saturated corner colors whose chroma slightly exceeds the
    8-bit range are clamped.
    """
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB array, got shape {img.shape}")
    rgb = img.astype(np.float64)
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    y = _KR * r + _KG * g + _KB * b - 128.0
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b
    y = np.clip(y, -128.0, 127.0)
    cb = np.clip(cb, -128.0, 127.0)
    cr = np.clip(cr, -128.0, 127.0)
    return YccPlanes(y=y, cb=_downsample2x(cb), cr=_downsample2x(cr))


def ycc_to_rgb(planes: YccPlanes) -> np.ndarray:
    """Invert rgb_to_ycc: replicate chroma, apply the inverse matrix, round."""
    h, w = planes.y.shape
    y = planes.y + 128.0
    cb = _upsample2x(planes.cb, h, w)
    cr = _upsample2x(planes.cr, h, w)
    r = y + 1.402 * cr
    g = y - (_KB * 1.772 / _KG) * cb - (_KR * 1.402 / _KG) * cr
    b = y + 1.772 * cb
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def split_blocks(plane: np.ndarray, block_size: int) -> np.ndarray:
    """Split a plane into a [Hb, Wb, B, B] block array, edge-padding to B multiples."""
    if block_size not in SUPPORTED_BLOCK_SIZES:
        raise ValueError(f"unsupported block size {block_size}")
    h, w = plane.shape
    pad_h = (-h) % block_size
    pad_w = (-w) % block_size
    padded = np.pad(plane, ((0, pad_h), (0, pad_w)), mode="edge")
    hb = padded.shape[0] // block_size
    wb = padded.shape[1] // block_size
    return padded.reshape(hb, block_size, wb, block_size).transpose(0, 2, 1, 3)


def merge_blocks(blocks: np.ndarray, height: int, width: int) -> np.ndarray:
    """Reassemble a [Hb, Wb, B, B] block array into a plane, cropping padding."""
    hb, wb, b, b2 = blocks.shape
    assert b == b2
    plane = blocks.transpose(0, 2, 1, 3).reshape(hb * b, wb * b)
    return plane[:height, :width]


def read_image(path) -> np.ndarray:
    """Load a PNG or PPM image as an HxWx3 uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_image(path, img: np.ndarray) -> None:
    """Write an HxWx3 uint8 RGB array as PNG or binary PPM (by extension)."""
    Image.fromarray(img, mode="RGB").save(path)
