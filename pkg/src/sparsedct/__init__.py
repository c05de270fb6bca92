"""Sparse block-DCT image codec and autoregressive coefficient-sequence model."""

from .codec import (
    BitCost,
    DctImage,
    Geometry,
    Ordering,
    TupleSeq,
    bit_cost,
    decode_planes,
    decode_to_rgb,
    deserialize,
    encode_image,
    encode_to_dct_image,
    read_sequence,
    serialize,
    write_sequence,
)
from .errors import CodecError, FileFormatError, TrainingDivergedError

__all__ = [
    "BitCost",
    "CodecError",
    "DctImage",
    "FileFormatError",
    "Geometry",
    "Ordering",
    "TrainingDivergedError",
    "TupleSeq",
    "bit_cost",
    "decode_planes",
    "decode_to_rgb",
    "deserialize",
    "encode_image",
    "encode_to_dct_image",
    "read_sequence",
    "serialize",
    "write_sequence",
]
