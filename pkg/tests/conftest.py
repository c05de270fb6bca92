"""Shared helpers for building valid random codec objects in tests."""

import numpy as np

from sparsedct.codec import (
    DctImage,
    Geometry,
    Ordering,
    TupleSeq,
    order_ranks,
    serialize,
)


def random_dct_image(geom: Geometry, rng: np.random.Generator, density: float = 0.05) -> DctImage:
    """Random valid coefficient image: chroma only at even-even positions."""
    data = np.zeros((geom.grid_h, geom.grid_w, geom.num_channels), dtype=np.int64)
    mask = rng.random(data.shape) < density
    chroma_ok = np.zeros((geom.grid_h, geom.grid_w, 1), dtype=bool)
    chroma_ok[0::2, 0::2] = True
    allowed = np.concatenate(
        [np.ones((geom.grid_h, geom.grid_w, geom.band_size), dtype=bool),
         np.broadcast_to(chroma_ok, (geom.grid_h, geom.grid_w, 2 * geom.band_size))],
        axis=2,
    )
    mask &= allowed
    magnitudes = rng.integers(1, geom.clip + 1, size=data.shape)
    signs = rng.choice([-1, 1], size=data.shape)
    data[mask] = (signs * magnitudes)[mask]
    return DctImage(data, geom)


def make_sequence(
    num_triples: int,
    geom: Geometry,
    rng: np.random.Generator,
    ordering: Ordering = Ordering.GENERATION,
) -> TupleSeq:
    """Valid complete sequence with exactly num_triples data triples."""
    bsq = geom.band_size
    luma_c, luma_p = np.meshgrid(np.arange(bsq), np.arange(geom.num_positions), indexing="ij")
    cand_c = [luma_c.ravel()]
    cand_p = [luma_p.ravel()]
    rows = np.arange(0, geom.grid_h, 2)
    cols = np.arange(0, geom.grid_w, 2)
    even_p = (rows[:, None] * geom.grid_w + cols[None, :]).ravel()
    for band in range(bsq, 3 * bsq):
        cand_c.append(np.full(len(even_p), band))
        cand_p.append(even_p)
    c = np.concatenate(cand_c)
    p = np.concatenate(cand_p)
    if num_triples > len(c):
        raise ValueError(f"geometry only has {len(c)} slots")
    pick = rng.choice(len(c), size=num_triples, replace=False)
    c, p = c[pick], p[pick]
    order = np.argsort(order_ranks(c, p, ordering, geom))
    values = rng.integers(1, geom.clip + 1, size=num_triples) * rng.choice([-1, 1], size=num_triples)
    return TupleSeq(
        channels=c[order].astype(np.int64),
        positions=p[order].astype(np.int64),
        values=values.astype(np.int64),
        ordering=ordering,
        geom=geom,
        complete=True,
    )


def sequence_from_image(img: DctImage, ordering: Ordering = Ordering.GENERATION) -> TupleSeq:
    return serialize(img, ordering)
