"""Fixed-size target chunks over triple sequences.

A sequence of N triples plus its stop marker is treated as N+1 elements.
Chunks start at multiples of the chunk size; a training example densifies
everything before the chunk into a coefficient image and hands the decoder
a window that reaches back `overlap` elements for local context. Loss is
applied to the chunk only.
"""

from dataclasses import dataclass

import numpy as np

from .codec import DctImage, TupleSeq, deserialize


@dataclass(frozen=True)
class ChunkSpec:
    chunk_size: int = 896
    overlap: int = 128

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk size must be positive")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must be in [0, chunk_size)")


@dataclass(frozen=True)
class SelectionPolicy:
    """Chunk-sampling weights: k^-decay for 1-based chunk k, floored at p_min."""

    decay: float = 3.0
    p_min: float = 0.1


def enumerate_chunks(length: int, chunk_size: int) -> list[tuple[int, int]]:
    """(start, length) pairs covering [0, length) in chunk_size strides."""
    if length < 1:
        raise ValueError("sequence length must be at least 1")
    starts = range(0, length, chunk_size)
    return [(s, min(chunk_size, length - s)) for s in starts]


def chunk_weights(num_chunks: int, policy: SelectionPolicy = SelectionPolicy()) -> np.ndarray:
    """Normalized selection probabilities over chunk indices."""
    if num_chunks < 1:
        raise ValueError("need at least one chunk")
    k = np.arange(1, num_chunks + 1, dtype=np.float64)
    raw = np.maximum(k ** -policy.decay, policy.p_min)
    return raw / raw.sum()


def select_chunk(
    num_chunks: int, policy: SelectionPolicy, rng: np.random.Generator
) -> int:
    """Draw a chunk index according to the selection policy."""
    return int(rng.choice(num_chunks, p=chunk_weights(num_chunks, policy)))


def keep_probability(length: int, max_length: int) -> float:
    """Length-bias filter: short sequences are kept proportionally less often."""
    if length < 1 or max_length < 1:
        raise ValueError("lengths must be positive")
    return min(length / max_length, 1.0)


@dataclass
class TrainingExample:
    """One decoder window plus the densified image of everything before it.

    Arrays all have length S = chunk_end - window_start. Targets are the
    window elements; inputs are the elements one step earlier (row 0 is a
    placeholder replaced by the learned start-of-sequence vector when `bos`
    is set). The stop marker appears as a target with the reserved channel
    id and zero position/value.
    """

    input_image: DctImage
    in_channels: np.ndarray
    in_positions: np.ndarray
    in_values: np.ndarray
    tgt_channels: np.ndarray
    tgt_positions: np.ndarray
    tgt_values: np.ndarray
    loss_mask: np.ndarray
    chunk_positions: np.ndarray
    bos: bool
    window_start: int = 0
    chunk_start: int = 0
    chunk_end: int = 0

    @property
    def num_tokens(self) -> int:
        return int(self.loss_mask.sum())


def build_training_example(
    seq: TupleSeq,
    chunk_index: int,
    spec: ChunkSpec = ChunkSpec(),
    chroma_only: bool = False,
) -> TrainingExample:
    """Assemble the training example for one chunk of one sequence.

    With `chroma_only` (colorization training) the loss mask is further
    restricted to chroma-band and stop elements, so luma context is never
    a prediction target.
    """
    length = seq.num_elements
    chunks = enumerate_chunks(length, spec.chunk_size)
    if not 0 <= chunk_index < len(chunks):
        raise IndexError(f"chunk index {chunk_index} out of range for {len(chunks)} chunks")
    start, chunk_len = chunks[chunk_index]
    end = start + chunk_len
    window_start = max(0, start - spec.overlap)

    elem_c, elem_p, elem_v = seq.element_arrays()
    tgt_c = elem_c[window_start:end]
    tgt_p = elem_p[window_start:end]
    tgt_v = elem_v[window_start:end]
    s = end - window_start

    bos = window_start == 0
    in_lo = window_start - 1
    if bos:
        in_c = np.concatenate([[0], elem_c[:end - 1]])
        in_p = np.concatenate([[0], elem_p[:end - 1]])
        in_v = np.concatenate([[0], elem_v[:end - 1]])
    else:
        in_c = elem_c[in_lo : end - 1]
        in_p = elem_p[in_lo : end - 1]
        in_v = elem_v[in_lo : end - 1]

    mask = np.arange(window_start, end) >= start
    if chroma_only:
        is_chroma = tgt_c >= seq.geom.band_size
        mask = mask & is_chroma

    input_image = deserialize(seq.prefix(start))
    return TrainingExample(
        input_image=input_image,
        in_channels=in_c.astype(np.int64),
        in_positions=in_p.astype(np.int64),
        in_values=in_v.astype(np.int64),
        tgt_channels=tgt_c.astype(np.int64),
        tgt_positions=tgt_p.astype(np.int64),
        tgt_values=tgt_v.astype(np.int64),
        loss_mask=mask,
        chunk_positions=np.arange(s, dtype=np.int64),
        bos=bos,
        window_start=window_start,
        chunk_start=start,
        chunk_end=end,
    )


def chunks_intersecting_tail(seq: TupleSeq, spec: ChunkSpec, tail_start: int) -> list[int]:
    """Chunk indices whose target span reaches elements >= tail_start."""
    chunks = enumerate_chunks(seq.num_elements, spec.chunk_size)
    return [i for i, (s, n) in enumerate(chunks) if s + n > tail_start]
