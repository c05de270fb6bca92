"""Sparse coefficient-image codec.

A quantized image is held two ways: as a dense coefficient image of shape
[grid_h, grid_w, 3*B^2] (luma zigzag channels first, then Cb, then Cr, with
chroma entries only at even-even positions), and as an ordered sparse list
of (channel, position, value) triples terminated by a stop marker. Both
directions plus the on-disk container and bit-cost accounting live here.
"""

import struct
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import dct, pixels
from .errors import CodecError, FileFormatError


class Ordering(str, Enum):
    GENERATION = "generation"
    COLORIZATION = "colorization"


@dataclass(frozen=True)
class Geometry:
    """Image geometry plus the codec settings that fix all derived sizes."""

    height: int
    width: int
    block_size: int
    quality: int = 75
    clip: int = 1200

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be at least 1x1")
        if self.block_size < 1:
            raise ValueError("block size must be positive")
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality must be in [1, 100], got {self.quality}")
        if self.clip < 1:
            raise ValueError("clip bound must be at least 1")

    @property
    def grid_h(self) -> int:
        return -(-self.height // self.block_size)

    @property
    def grid_w(self) -> int:
        return -(-self.width // self.block_size)

    @property
    def chroma_grid_h(self) -> int:
        return -(-self.grid_h // 2)

    @property
    def chroma_grid_w(self) -> int:
        return -(-self.grid_w // 2)

    @property
    def band_size(self) -> int:
        return self.block_size * self.block_size

    @property
    def num_channels(self) -> int:
        return 3 * self.band_size

    @property
    def stop_channel(self) -> int:
        return self.num_channels

    @property
    def num_positions(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def num_subpixels(self) -> int:
        return self.height * self.width * 3


@dataclass
class DctImage:
    """Dense [grid_h, grid_w, 3*B^2] integer coefficient tensor."""

    data: np.ndarray
    geom: Geometry

    def copy(self) -> "DctImage":
        return DctImage(self.data.copy(), self.geom)


@dataclass
class TupleSeq:
    """Ordered sparse triples plus an optional terminal stop marker.

    `complete` records whether the stop marker is present; the element view
    used by the model and chunker counts it as one trailing element.
    """

    channels: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    ordering: Ordering
    geom: Geometry
    complete: bool = True

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def num_elements(self) -> int:
        """Sequence length as seen by the model (stop counts as an element)."""
        return len(self.channels) + (1 if self.complete else 0)

    def element_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Triples with the stop marker materialized as (stop_channel, 0, 0)."""
        if not self.complete:
            return self.channels, self.positions, self.values
        c = np.append(self.channels, self.geom.stop_channel)
        p = np.append(self.positions, 0)
        v = np.append(self.values, 0)
        return c, p, v

    def prefix(self, n: int) -> "TupleSeq":
        """First n data triples, as an incomplete sequence."""
        n = min(n, len(self.channels))
        return TupleSeq(
            self.channels[:n].copy(),
            self.positions[:n].copy(),
            self.values[:n].copy(),
            self.ordering,
            self.geom,
            complete=False,
        )


# ---------------------------------------------------------------------------
# Zigzag tables
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def zigzag_pairs(block_size: int) -> tuple[tuple[int, int], ...]:
    """(row, col) visit order along anti-diagonals with alternating direction."""
    if block_size < 1:
        raise ValueError("block size must be positive")
    b = block_size
    order = []
    for s in range(2 * b - 1):
        cells = [(s - c, c) for c in range(max(0, s - b + 1), min(s, b - 1) + 1)]
        # Even diagonals run bottom-left to top-right, odd ones the reverse.
        order.extend(cells if s % 2 == 0 else reversed(cells))
    return tuple(order)


@lru_cache(maxsize=None)
def _zigzag_flat(block_size: int) -> np.ndarray:
    pairs = zigzag_pairs(block_size)
    return np.array([r * block_size + c for r, c in pairs], dtype=np.int64)


def scan_zigzag(blocks: np.ndarray) -> np.ndarray:
    """[..., B, B] block array -> [..., B^2] zigzag vectors."""
    b = blocks.shape[-1]
    flat = blocks.reshape(*blocks.shape[:-2], b * b)
    return flat[..., _zigzag_flat(b)]

def unscan_zigzag(vectors: np.ndarray) -> np.ndarray:
    """[..., B^2] zigzag vectors -> [..., B, B] blocks."""
    n = vectors.shape[-1]
    b = int(round(n**0.5))
    assert b * b == n
    flat = np.empty_like(vectors)
    flat[..., _zigzag_flat(b)] = vectors
    return flat.reshape(*vectors.shape[:-1], b, b)


# ---------------------------------------------------------------------------
# Dense coefficient image
# ---------------------------------------------------------------------------


def assemble_dct_image(
    luma: np.ndarray, cb: np.ndarray, cr: np.ndarray, geom: Geometry
) -> DctImage:
    """Pack quantized [.,.,B,B] block grids into a dense coefficient image.

    Chroma block (i, j) lands at position (2i, 2j) to align with the full
    resolution luma grid.
    """
    bsq = geom.band_size
    gh, gw = geom.grid_h, geom.grid_w
    cgh, cgw = geom.chroma_grid_h, geom.chroma_grid_w
    if luma.shape[:2] != (gh, gw):
        raise CodecError(f"luma grid shape {luma.shape[:2]} != {(gh, gw)}")
    if cb.shape[:2] != (cgh, cgw) or cr.shape[:2] != (cgh, cgw):
        raise CodecError("chroma grid shape does not match geometry")
    data = np.zeros((gh, gw, 3 * bsq), dtype=np.int64)
    data[:, :, :bsq] = scan_zigzag(luma)
    data[0::2, 0::2, bsq : 2 * bsq] = scan_zigzag(cb)
    data[0::2, 0::2, 2 * bsq :] = scan_zigzag(cr)
    return DctImage(data, geom)


def disassemble_dct_image(img: DctImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unpack a coefficient image back into luma/cb/cr block grids."""
    geom = img.geom
    bsq = geom.band_size
    chroma = img.data[:, :, bsq:]
    mask = np.zeros(img.data.shape[:2], dtype=bool)
    mask[0::2, 0::2] = True
    if np.any(chroma[~mask]):
        raise CodecError("chroma band nonzero at odd coordinate")
    luma = unscan_zigzag(img.data[:, :, :bsq])
    cb = unscan_zigzag(img.data[0::2, 0::2, bsq : 2 * bsq])
    cr = unscan_zigzag(img.data[0::2, 0::2, 2 * bsq :])
    return luma, cb, cr


# ---------------------------------------------------------------------------
# Orderings and serialization
# ---------------------------------------------------------------------------


def order_ranks(
    channels: np.ndarray, positions: np.ndarray, ordering: Ordering, geom: Geometry
) -> np.ndarray:
    """Total-order rank of each triple under the given ordering.

    Generation sorts by (zigzag index, plane Y<Cb<Cr, raster position), i.e.
    planes interleaved 1:1:1 by frequency. Colorization sorts all luma
    channels before all chroma channels, each group frequency-first. Ranks
    are unique per (channel, position) and strictly increase along a valid
    sequence.
    """
    bsq = geom.band_size
    c = np.asarray(channels, dtype=np.int64)
    p = np.asarray(positions, dtype=np.int64)
    k = c % bsq
    plane = c // bsq
    if ordering is Ordering.COLORIZATION:
        k = k + bsq * (plane > 0)
    return (k * 3 + plane) * geom.num_positions + p


def serialize(img: DctImage, ordering: Ordering) -> TupleSeq:
    """List the nonzero coefficients as ordered triples with a stop marker."""
    i, j, c = np.nonzero(img.data)
    p = i * img.geom.grid_w + j
    v = img.data[i, j, c]
    order = np.argsort(order_ranks(c, p, ordering, img.geom))
    return TupleSeq(
        channels=c[order].astype(np.int64),
        positions=p[order].astype(np.int64),
        values=v[order].astype(np.int64),
        ordering=ordering,
        geom=img.geom,
        complete=True,
    )


def validate_sequence(seq: TupleSeq) -> None:
    """Check every sequence invariant; raise CodecError on the first violation."""
    geom = seq.geom
    c, p, v = seq.channels, seq.positions, seq.values
    if not (len(c) == len(p) == len(v)):
        raise CodecError("triple arrays have mismatched lengths")
    if len(c) == 0:
        return
    if c.min() < 0 or c.max() >= geom.num_channels:
        raise CodecError("channel id out of range")
    if p.min() < 0 or p.max() >= geom.num_positions:
        raise CodecError("position out of range")
    if np.any(v == 0):
        raise CodecError("zero value in sparse triple")
    if np.abs(v).max() > geom.clip:
        raise CodecError("value exceeds clip bound")
    chroma = c >= geom.band_size
    if np.any(chroma):
        rows = p[chroma] // geom.grid_w
        cols = p[chroma] % geom.grid_w
        if np.any(rows % 2) or np.any(cols % 2):
            raise CodecError("chroma triple at odd coordinate")
    ranks = order_ranks(c, p, seq.ordering, geom)
    if len(ranks) > 1 and np.any(np.diff(ranks) <= 0):
        if len(np.unique(c * geom.num_positions + p)) != len(c):
            raise CodecError("duplicate (channel, position) pair")
        raise CodecError(f"triples not sorted by {seq.ordering.value} ordering")


def deserialize(seq: TupleSeq) -> DctImage:
    """Densify a (possibly prefix) sequence into a coefficient image."""
    validate_sequence(seq)
    geom = seq.geom
    data = np.zeros((geom.grid_h, geom.grid_w, geom.num_channels), dtype=np.int64)
    i = seq.positions // geom.grid_w
    j = seq.positions % geom.grid_w
    data[i, j, seq.channels] = seq.values
    return DctImage(data, geom)


# ---------------------------------------------------------------------------
# Full encode / decode pipeline
# ---------------------------------------------------------------------------


def encode_to_dct_image(rgb: np.ndarray, geom: Geometry) -> DctImage:
    """RGB image -> quantized coefficient image at the given geometry."""
    if rgb.shape[:2] != (geom.height, geom.width):
        raise CodecError(
            f"image shape {rgb.shape[:2]} does not match geometry "
            f"{(geom.height, geom.width)}"
        )
    planes = pixels.rgb_to_ycc(rgb)
    b = geom.block_size
    qy = dct.quant_matrix(geom.quality, "luma", b)
    qc = dct.quant_matrix(geom.quality, "chroma", b)
    luma = dct.quantize(dct.dct2(pixels.split_blocks(planes.y, b)), qy, geom.clip)
    cb = dct.quantize(dct.dct2(pixels.split_blocks(planes.cb, b)), qc, geom.clip)
    cr = dct.quantize(dct.dct2(pixels.split_blocks(planes.cr, b)), qc, geom.clip)
    return assemble_dct_image(luma, cb, cr, geom)


def encode_image(rgb: np.ndarray, geom: Geometry, ordering: Ordering) -> TupleSeq:
    """RGB image -> ordered sparse triple sequence."""
    return serialize(encode_to_dct_image(rgb, geom), ordering)


def dct_image_to_planes(img: DctImage) -> pixels.YccPlanes:
    """Dequantize and inverse-transform a coefficient image into YCC planes."""
    geom = img.geom
    b = geom.block_size
    luma, cb, cr = disassemble_dct_image(img)
    qy = dct.quant_matrix(geom.quality, "luma", b)
    qc = dct.quant_matrix(geom.quality, "chroma", b)
    ch, cw = (geom.height + 1) // 2, (geom.width + 1) // 2
    return pixels.YccPlanes(
        y=pixels.merge_blocks(dct.idct2(dct.dequantize(luma, qy)), geom.height, geom.width),
        cb=pixels.merge_blocks(dct.idct2(dct.dequantize(cb, qc)), ch, cw),
        cr=pixels.merge_blocks(dct.idct2(dct.dequantize(cr, qc)), ch, cw),
    )


def decode_planes(seq: TupleSeq) -> pixels.YccPlanes:
    """Sequence (or prefix) -> reconstructed YCC planes."""
    return dct_image_to_planes(deserialize(seq))


def decode_to_rgb(seq: TupleSeq) -> np.ndarray:
    """Sequence (or prefix) -> reconstructed uint8 RGB image."""
    return pixels.ycc_to_rgb(decode_planes(seq))


# ---------------------------------------------------------------------------
# Conditioning prefixes
# ---------------------------------------------------------------------------


def dc_prefix(img: DctImage) -> TupleSeq:
    """All first-channel (block mean) triples of every plane, generation order.

    This is a true prefix of the generation-ordered sequence and is the
    conditioning context for block-size-factor upsampling.
    """
    full = serialize(img, Ordering.GENERATION)
    bsq = img.geom.band_size
    keep = full.channels % bsq == 0
    n = int(keep.sum())
    if not np.all(keep[:n]):
        raise CodecError("first-channel triples do not form a prefix")
    return full.prefix(n)


def luma_prefix(img: DctImage) -> TupleSeq:
    """All luma triples under the colorization ordering (chroma tail omitted)."""
    full = serialize(img, Ordering.COLORIZATION)
    keep = full.channels < img.geom.band_size
    n = int(keep.sum())
    if not np.all(keep[:n]):
        raise CodecError("luma triples do not form a prefix")
    return full.prefix(n)


# ---------------------------------------------------------------------------
# Bit-cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BitCost:
    dense_bits: float
    sparse_bits: float
    dense_bpp: float
    sparse_bpp: float


def _ceil_log2(n: int) -> int:
    return int(n - 1).bit_length()


def bit_cost(img: DctImage) -> BitCost:
    """Fixed-width bit accounting for dense vs. sparse storage.

    Dense: every slot (luma full grid plus two quarter-resolution chroma
    grids, hence the 1.5 factor) stores one value of ceil(log2(2*clip+1))
    bits. Sparse: each nonzero triple stores fixed-width channel, position,
    and value fields; the stop marker is excluded.
    """
    geom = img.geom
    value_bits = _ceil_log2(2 * geom.clip + 1)
    dense = 1.5 * geom.num_positions * geom.band_size * value_bits
    triple_bits = (
        _ceil_log2(geom.num_channels + 1)
        + _ceil_log2(geom.num_positions)
        + value_bits
    )
    nonzero = int(np.count_nonzero(img.data))
    sparse = float(nonzero * triple_bits)
    return BitCost(
        dense_bits=dense,
        sparse_bits=sparse,
        dense_bpp=dense / geom.num_subpixels,
        sparse_bpp=sparse / geom.num_subpixels,
    )


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------

_MAGIC = b"SDCT"
_VERSION = 1
_HEADER = struct.Struct("<4sBIIBBBHI")
_RECORD = struct.Struct("<HIh")
_ORDERING_CODE = {Ordering.GENERATION: 0, Ordering.COLORIZATION: 1}
_ORDERING_FROM_CODE = {v: k for k, v in _ORDERING_CODE.items()}


def write_sequence(path, seq: TupleSeq) -> None:
    """Write a complete sequence to the little-endian binary container."""
    if not seq.complete:
        raise CodecError("refusing to write an incomplete sequence")
    validate_sequence(seq)
    geom = seq.geom
    if geom.clip > 32767:
        raise CodecError("clip bound exceeds the i16 value field")
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                _MAGIC,
                _VERSION,
                geom.height,
                geom.width,
                geom.block_size,
                geom.quality,
                _ORDERING_CODE[seq.ordering],
                geom.clip,
                len(seq),
            )
        )
        for c, p, v in zip(seq.channels, seq.positions, seq.values):
            f.write(_RECORD.pack(int(c), int(p), int(v)))


def read_sequence(path) -> TupleSeq:
    """Read and fully validate a sequence container."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FileFormatError("file truncated: header incomplete")
    magic, version, h, w, b, quality, order_code, clip, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FileFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FileFormatError(f"unsupported version {version}")
    if order_code not in _ORDERING_FROM_CODE:
        raise FileFormatError(f"unknown ordering code {order_code}")
    try:
        geom = Geometry(height=h, width=w, block_size=b, quality=quality, clip=clip)
    except ValueError as e:
        raise FileFormatError(f"bad header field: {e}") from e
    expected = _HEADER.size + count * _RECORD.size
    if len(raw) != expected:
        raise FileFormatError(
            f"file size {len(raw)} does not match record count (expected {expected})"
        )
    channels = np.empty(count, dtype=np.int64)
    positions = np.empty(count, dtype=np.int64)
    values = np.empty(count, dtype=np.int64)
    for idx in range(count):
        c, p, v = _RECORD.unpack_from(raw, _HEADER.size + idx * _RECORD.size)
        channels[idx], positions[idx], values[idx] = c, p, v
    seq = TupleSeq(
        channels, positions, values, _ORDERING_FROM_CODE[order_code], geom, complete=True
    )
    try:
        validate_sequence(seq)
    except CodecError as e:
        raise FileFormatError(f"bad record data: {e}") from e
    return seq
