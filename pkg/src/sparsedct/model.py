"""Chunked autoregressive transformer over sparse coefficient sequences.

An encoder embeds the densified coefficient image of everything before the
current window; three stacked decoders (channel, then position, then value)
predict the next triple field-by-field, each with right-masked
self-attention and cross-attention into the encoded image. Every residual
branch is pre-norm and scaled by a zero-initialized learned scalar, so the
whole network is an identity map at initialization and, with the output
heads zero-initialized, starts from exactly uniform predictions.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import DctImage, Geometry, Ordering, TupleSeq, deserialize, order_ranks
from .chunking import TrainingExample
from .errors import CodecError

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

LayerSpec = list[tuple[int, int]]


@dataclass
class ModelConfig:
    """Architecture hyperparameters tied to a fixed sequence geometry.

    Layer specs are lists of (n_attention, n_feedforward) block tuples; a
    decoder block additionally cross-attends into the encoded image after
    its self-attention layers.
    """

    hidden_size: int = 64
    num_heads: int = 2
    encoder_spec: LayerSpec = field(default_factory=lambda: [(1, 2), (1, 2)])
    channel_spec: LayerSpec = field(default_factory=lambda: [(1, 2), (1, 2)])
    position_spec: LayerSpec = field(default_factory=lambda: [(1, 2), (1, 2)])
    value_spec: LayerSpec = field(default_factory=lambda: [(1, 2), (1, 2)])
    block_size: int = 8
    grid_height: int = 4
    grid_width: int = 4
    clip: int = 1200
    chunk_size: int = 896
    overlap: int = 128
    downsample_kernel: int = 1
    downsample_stride: int = 1
    dropout: float = 0.0
    ordering: Ordering = Ordering.GENERATION

    def __post_init__(self):
        self.ordering = Ordering(self.ordering)
        for name in ("encoder_spec", "channel_spec", "position_spec", "value_spec"):
            spec = [tuple(t) for t in getattr(self, name)]
            if not spec or any(len(t) != 2 or t[0] < 0 or t[1] < 0 for t in spec):
                raise ValueError(f"{name} must be a non-empty list of (n_att, n_ff) pairs")
            setattr(self, name, spec)
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden size must be divisible by the number of heads")
        if self.downsample_stride < 1 or self.downsample_kernel < self.downsample_stride:
            raise ValueError("need downsample kernel >= stride >= 1")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must be in [0, chunk_size)")

    @property
    def band_size(self) -> int:
        return self.block_size * self.block_size

    @property
    def channel_vocab(self) -> int:
        return 3 * self.band_size + 1  # data channels plus stop

    @property
    def stop_channel(self) -> int:
        return 3 * self.band_size

    @property
    def position_vocab(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def value_vocab(self) -> int:
        return 2 * self.clip + 1

    @property
    def max_window(self) -> int:
        return self.chunk_size + self.overlap

    @property
    def encoder_grid(self) -> tuple[int, int]:
        s = self.downsample_stride
        return -(-self.grid_height // s), -(-self.grid_width // s)

    @property
    def encoder_len(self) -> int:
        eh, ew = self.encoder_grid
        return eh * ew

    def matches_geometry(self, geom: Geometry) -> bool:
        return (
            geom.block_size == self.block_size
            and geom.grid_h == self.grid_height
            and geom.grid_w == self.grid_width
            and geom.clip == self.clip
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Ordering):
                v = v.value
            elif f.name.endswith("_spec"):
                v = [list(t) for t in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class SelfAttention(nn.Module):
    def __init__(self, config: ModelConfig, causal: bool):
        super().__init__()
        d = config.hidden_size
        self.num_heads = config.num_heads
        self.causal = causal
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)

    def forward(self, x):
        n, s, d = x.shape
        h = self.num_heads
        q, k, v = self.qkv(x).split(d, dim=2)
        q = q.view(n, s, h, d // h).transpose(1, 2)
        k = k.view(n, s, h, d // h).transpose(1, 2)
        v = v.view(n, s, h, d // h).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(d // h)
        if self.causal:
            mask = torch.triu(torch.ones(s, s, dtype=torch.bool, device=x.device), 1)
            att = att.masked_fill(mask, float("-inf"))
        y = F.softmax(att, dim=-1) @ v
        return self.proj(y.transpose(1, 2).reshape(n, s, d))


class CrossAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden_size
        self.num_heads = config.num_heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d, 2 * d)
        self.proj = nn.Linear(d, d)

    def forward(self, x, memory):
        n, s, d = x.shape
        t = memory.shape[1]
        h = self.num_heads
        q = self.q(x).view(n, s, h, d // h).transpose(1, 2)
        k, v = self.kv(memory).split(d, dim=2)
        k = k.view(n, t, h, d // h).transpose(1, 2)
        v = v.view(n, t, h, d // h).transpose(1, 2)
        att = F.softmax((q @ k.transpose(-2, -1)) / math.sqrt(d // h), dim=-1)
        return self.proj((att @ v).transpose(1, 2).reshape(n, s, d))


class FeedForward(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden_size
        self.up = nn.Linear(d, 4 * d)
        self.down = nn.Linear(4 * d, d)

    def forward(self, x):
        return self.down(F.gelu(self.up(x)))


class Residual(nn.Module):
    """Pre-norm residual branch scaled by a zero-initialized scalar."""

    def __init__(self, config: ModelConfig, inner: nn.Module, needs_memory: bool):
        super().__init__()
        self.norm = nn.LayerNorm(config.hidden_size)
        self.inner = inner
        self.alpha = nn.Parameter(torch.zeros(()))
        self.drop = nn.Dropout(config.dropout)
        self.needs_memory = needs_memory

    def forward(self, x, memory=None):
        h = self.norm(x)
        h = self.inner(h, memory) if self.needs_memory else self.inner(h)
        return x + self.alpha * self.drop(h)


class Stack(nn.Module):
    """A PAR-style stack: per block, self-attention layers, an optional
    cross-attention layer, then feedforward layers."""

    def __init__(self, config: ModelConfig, spec: LayerSpec, causal: bool, cross: bool):
        super().__init__()
        layers = []
        for n_att, n_ff in spec:
            for _ in range(n_att):
                layers.append(Residual(config, SelfAttention(config, causal), False))
            if cross:
                layers.append(Residual(config, CrossAttention(config), True))
            for _ in range(n_ff):
                layers.append(Residual(config, FeedForward(config), False))
        self.layers = nn.ModuleList(layers)

    def forward(self, x, memory=None):
        for layer in self.layers:
            x = layer(x, memory) if layer.needs_memory else layer(x)
        return x


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded tensors for a batch of training examples."""

    images: torch.Tensor  # [N, gh, gw, 3B^2] float
    in_channels: torch.Tensor  # [N, S] long
    in_positions: torch.Tensor
    in_value_ids: torch.Tensor
    tgt_channels: torch.Tensor
    tgt_positions: torch.Tensor
    tgt_value_ids: torch.Tensor
    chunk_positions: torch.Tensor
    loss_mask: torch.Tensor  # [N, S] bool
    bos: torch.Tensor  # [N] bool


def collate_examples(
    examples: list[TrainingExample], config: ModelConfig, dtype=torch.float32
) -> Batch:
    """Stack examples into padded tensors; padding rows carry no loss."""
    n = len(examples)
    s = max(len(ex.loss_mask) for ex in examples)
    clip = config.clip

    def pad_long(rows):
        out = torch.zeros(n, s, dtype=torch.long)
        for i, row in enumerate(rows):
            out[i, : len(row)] = torch.from_numpy(np.ascontiguousarray(row))
        return out

    images = torch.stack(
        [torch.from_numpy(ex.input_image.data.astype(np.float32)) for ex in examples]
    ).to(dtype)
    mask = torch.zeros(n, s, dtype=torch.bool)
    for i, ex in enumerate(examples):
        mask[i, : len(ex.loss_mask)] = torch.from_numpy(ex.loss_mask)
    return Batch(
        images=images,
        in_channels=pad_long([ex.in_channels for ex in examples]),
        in_positions=pad_long([ex.in_positions for ex in examples]),
        in_value_ids=pad_long([ex.in_values + clip for ex in examples]),
        tgt_channels=pad_long([ex.tgt_channels for ex in examples]),
        tgt_positions=pad_long([ex.tgt_positions for ex in examples]),
        tgt_value_ids=pad_long([ex.tgt_values + clip for ex in examples]),
        chunk_positions=pad_long([ex.chunk_positions for ex in examples]),
        loss_mask=mask,
        bos=torch.tensor([ex.bos for ex in examples], dtype=torch.bool),
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class SparseDctTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden_size
        bands = 3 * config.band_size
        k, s = config.downsample_kernel, config.downsample_stride

        self.channel_emb = nn.Embedding(config.channel_vocab, d)
        self.position_emb = nn.Embedding(config.position_vocab, d)
        self.value_emb = nn.Embedding(config.value_vocab, d)
        self.window_pos_emb = nn.Embedding(config.max_window, d)
        self.bos_emb = nn.Parameter(torch.zeros(d))
        self.patch_proj = nn.Conv2d(bands, d, kernel_size=k, stride=s)
        self.encoder_pos_emb = nn.Embedding(config.encoder_len, d)

        self.encoder = Stack(config, config.encoder_spec, causal=False, cross=False)
        self.channel_decoder = Stack(config, config.channel_spec, causal=True, cross=True)
        self.position_decoder = Stack(config, config.position_spec, causal=True, cross=True)
        self.value_decoder = Stack(config, config.value_spec, causal=True, cross=True)

        self.channel_head = nn.Linear(d, config.channel_vocab)
        self.position_head = nn.Linear(d, config.position_vocab)
        self.value_head = nn.Linear(d, config.value_vocab)

        self.apply(self._init_weights)
        # Zero heads: with all residual scalars at zero this makes the
        # initial predictive distributions exactly uniform.
        for head in (self.channel_head, self.position_head, self.value_head):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, (nn.Linear, nn.Conv2d)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)

    # -- encoder ------------------------------------------------------------

    def embed_patches(self, images: torch.Tensor) -> torch.Tensor:
        """Patch projection plus 2D position embeddings (no encoder blocks)."""
        cfg = self.config
        x = (images / cfg.clip).to(self.patch_proj.weight.dtype)
        x = x.permute(0, 3, 1, 2)  # [N, bands, gh, gw]
        eh, ew = cfg.encoder_grid
        k, s = cfg.downsample_kernel, cfg.downsample_stride
        pad_h = s * (eh - 1) + k - cfg.grid_height
        pad_w = s * (ew - 1) + k - cfg.grid_width
        x = F.pad(x, (0, pad_w, 0, pad_h))
        x = self.patch_proj(x).flatten(2).transpose(1, 2)  # [N, eh*ew, d]
        pos = torch.arange(x.shape[1], device=x.device)
        return x + self.encoder_pos_emb(pos)

    def encode_input(self, images: torch.Tensor) -> torch.Tensor:
        """Densified coefficient image -> encoder memory sequence."""
        if images.shape[1:3] != (self.config.grid_height, self.config.grid_width):
            raise CodecError(
                f"image grid {tuple(images.shape[1:3])} does not match model "
                f"{(self.config.grid_height, self.config.grid_width)}"
            )
        return self.encoder(self.embed_patches(images))

    # -- stacked decoders ----------------------------------------------------

    def gather_cells(self, memory: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        """Encoder states at the downsampled cell of each target position."""
        cfg = self.config
        s = cfg.downsample_stride
        _, ew = cfg.encoder_grid
        rows = positions // cfg.grid_width
        cols = positions % cfg.grid_width
        cells = (rows // s) * ew + (cols // s)
        idx = cells.unsqueeze(-1).expand(-1, -1, memory.shape[-1])
        return memory.gather(1, idx)

    def decode(self, batch: Batch, memory: torch.Tensor):
        """Run the three decoders; returns (channel, position, value) logits."""
        emb = (
            self.channel_emb(batch.in_channels)
            + self.position_emb(batch.in_positions)
            + self.value_emb(batch.in_value_ids)
        )
        if batch.bos.any():
            first = torch.zeros_like(batch.loss_mask)
            first[:, 0] = batch.bos
            emb = torch.where(first.unsqueeze(-1), self.bos_emb.expand_as(emb), emb)
        e_channel = emb + self.window_pos_emb(batch.chunk_positions)

        h_channel = self.channel_decoder(e_channel, memory)
        channel_logits = self.channel_head(h_channel)

        e_position = h_channel + self.channel_emb(batch.tgt_channels)
        h_position = self.position_decoder(e_position, memory)
        position_logits = self.position_head(h_position)

        e_value = h_position + self.gather_cells(memory, batch.tgt_positions)
        h_value = self.value_decoder(e_value, memory)
        value_logits = self.value_head(h_value)
        return channel_logits, position_logits, value_logits

    def forward(self, batch: Batch):
        return self.decode(batch, self.encode_input(batch.images))

    # -- loss -----------------------------------------------------------------

    def loss_components(self, batch: Batch) -> dict:
        """Masked NLL sums in nats per head, plus the token count.

        The stop marker is a channel-head target only; position and value
        heads are not evaluated on stop elements.
        """
        channel_logits, position_logits, value_logits = self(batch)
        stop = self.config.stop_channel

        def masked_nll(logits, targets, mask):
            nll = F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none"
            ).reshape(targets.shape)
            return (nll * mask).sum()

        mask = batch.loss_mask.to(value_logits.dtype)
        triple_mask = mask * (batch.tgt_channels != stop).to(mask.dtype)
        return {
            "nll_channel": masked_nll(channel_logits, batch.tgt_channels, mask),
            "nll_position": masked_nll(position_logits, batch.tgt_positions, triple_mask),
            "nll_value": masked_nll(value_logits, batch.tgt_value_ids, triple_mask),
            "tokens": int(batch.loss_mask.sum().item()),
        }


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _max_rank(config: ModelConfig, geom: Geometry, channel: int) -> int:
    """Largest rank any valid triple of this channel can have."""
    if channel >= config.band_size * 3:
        raise ValueError("rank of stop marker is undefined")
    if channel < config.band_size:
        max_p = geom.num_positions - 1
    else:
        max_row = (geom.grid_h - 1) // 2 * 2
        max_col = (geom.grid_w - 1) // 2 * 2
        max_p = max_row * geom.grid_w + max_col
    return int(order_ranks(np.array([channel]), np.array([max_p]), config.ordering, geom)[0])


def _base_rank(config: ModelConfig, geom: Geometry, channel: int) -> int:
    return int(order_ranks(np.array([channel]), np.array([0]), config.ordering, geom)[0])


class _SamplerMasks:
    """Per-geometry tables for ordering-validity logit masks."""

    def __init__(self, config: ModelConfig, geom: Geometry):
        self.config = config
        self.geom = geom
        channels = np.arange(3 * config.band_size)
        self.base = np.array([_base_rank(config, geom, c) for c in channels])
        self.max = np.array([_max_rank(config, geom, c) for c in channels])
        rows = np.arange(geom.num_positions) // geom.grid_w
        cols = np.arange(geom.num_positions) % geom.grid_w
        self.even_even = (rows % 2 == 0) & (cols % 2 == 0)

    def channel_mask(self, last_rank: int) -> np.ndarray:
        """Boolean over the channel vocab: can this channel still emit a triple?"""
        ok = self.max > last_rank
        return np.append(ok, True)  # stop is always available

    def position_mask(self, channel: int, last_rank: int) -> np.ndarray:
        p = np.arange(self.geom.num_positions)
        ok = self.base[channel] + p > last_rank
        if channel >= self.config.band_size:
            ok &= self.even_even
        return ok


def _draw(logits: torch.Tensor, valid: np.ndarray, temperature: float,
          generator: torch.Generator) -> int:
    masked = logits.clone()
    masked[~torch.from_numpy(np.ascontiguousarray(valid))] = float("-inf")
    if temperature <= 0:
        return int(masked.argmax().item())
    probs = F.softmax(masked / temperature, dim=-1)
    return int(torch.multinomial(probs, 1, generator=generator).item())


@torch.no_grad()
def sample_continuation(
    model: SparseDctTransformer,
    context: TupleSeq,
    generator: torch.Generator,
    temperature: float = 1.0,
    max_chunks: int = 1,
) -> TupleSeq:
    """Extend a sequence prefix chunk by chunk until stop or the chunk limit.

    Each chunk densifies the accumulated context into a coefficient image,
    then samples channel, position, and value per element with ordering-
    validity masks, so the output always deserializes.
    """
    config = model.config
    geom = context.geom
    if context.ordering is not config.ordering:
        raise CodecError(
            f"context ordering {context.ordering.value} does not match model "
            f"{config.ordering.value}"
        )
    if not config.matches_geometry(geom):
        raise CodecError("context geometry does not match model configuration")
    if context.complete:
        return context
    model.eval()
    masks = _SamplerMasks(config, geom)
    dtype = model.bos_emb.dtype

    chans = list(context.channels)
    poss = list(context.positions)
    vals = list(context.values)
    last_rank = -1
    if chans:
        ranks = order_ranks(np.array(chans), np.array(poss), config.ordering, geom)
        last_rank = int(ranks[-1])

    for _ in range(max_chunks):
        chunk_base = len(chans)
        prefix = TupleSeq(
            np.array(chans, dtype=np.int64), np.array(poss, dtype=np.int64),
            np.array(vals, dtype=np.int64), config.ordering, geom, complete=False,
        )
        memory = model.encode_input(
            torch.from_numpy(deserialize(prefix).data.astype(np.float32))
            .to(dtype).unsqueeze(0)
        )
        window_start = max(0, chunk_base - config.overlap)

        for _step in range(config.chunk_size):
            g = len(chans)
            s = g - window_start + 1
            bos = window_start == 0

            def element(idx):
                if idx < 0 or idx >= len(chans):
                    return 0, 0, 0
                return int(chans[idx]), int(poss[idx]), int(vals[idx])

            rows_in = [element(window_start - 1 + j) for j in range(s)]
            rows_tgt = [element(window_start + j) for j in range(s)]

            def tensors(rows):
                c = torch.tensor([[r[0] for r in rows]], dtype=torch.long)
                p = torch.tensor([[r[1] for r in rows]], dtype=torch.long)
                v = torch.tensor([[r[2] + config.clip for r in rows]], dtype=torch.long)
                return c, p, v

            in_c, in_p, in_v = tensors(rows_in)
            tgt_c, tgt_p, tgt_v = tensors(rows_tgt)
            batch = Batch(
                images=torch.zeros(0),  # encoder memory computed once per chunk
                in_channels=in_c, in_positions=in_p, in_value_ids=in_v,
                tgt_channels=tgt_c, tgt_positions=tgt_p, tgt_value_ids=tgt_v,
                chunk_positions=torch.arange(s, dtype=torch.long).unsqueeze(0),
                loss_mask=torch.zeros(1, s, dtype=torch.bool),
                bos=torch.tensor([bos]),
            )

            channel_logits, _, _ = model.decode(batch, memory)
            channel = _draw(channel_logits[0, -1], masks.channel_mask(last_rank),
                            temperature, generator)
            if channel == config.stop_channel:
                return TupleSeq(
                    np.array(chans, dtype=np.int64), np.array(poss, dtype=np.int64),
                    np.array(vals, dtype=np.int64), config.ordering, geom, complete=True,
                )

            batch.tgt_channels[0, -1] = channel
            _, position_logits, _ = model.decode(batch, memory)
            position = _draw(position_logits[0, -1],
                             masks.position_mask(channel, last_rank),
                             temperature, generator)

            batch.tgt_positions[0, -1] = position
            _, _, value_logits = model.decode(batch, memory)
            valid_values = np.ones(config.value_vocab, dtype=bool)
            valid_values[config.clip] = False  # zero coefficient never emitted
            value_id = _draw(value_logits[0, -1], valid_values, temperature, generator)

            chans.append(channel)
            poss.append(position)
            vals.append(value_id - config.clip)
            last_rank = int(
                order_ranks(np.array([channel]), np.array([position]),
                            config.ordering, geom)[0]
            )

    return TupleSeq(
        np.array(chans, dtype=np.int64), np.array(poss, dtype=np.int64),
        np.array(vals, dtype=np.int64), config.ordering, geom, complete=False,
    )
