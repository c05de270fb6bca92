"""Optimization loop, likelihood evaluation, and gradient checking."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .chunking import (
    ChunkSpec,
    SelectionPolicy,
    build_training_example,
    chunk_weights,
    chunks_intersecting_tail,
    enumerate_chunks,
    keep_probability,
)
from .codec import Geometry, Ordering, TupleSeq, order_ranks
from .errors import TrainingDivergedError
from .model import Batch, ModelConfig, SparseDctTransformer, collate_examples

LN2 = math.log(2.0)


@dataclass
class TrainConfig:
    max_lr: float = 3e-4
    warmup_steps: int = 1000
    total_steps: int = 10_000
    token_budget: int = 1_000_000
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = 1.0
    max_filter_length: int = 1  # L_max for the short-sequence filter; 1 disables it
    seed: int = 0

    def __post_init__(self):
        if self.token_budget < 1 or self.batch_size < 1:
            raise ValueError("token budget and batch size must be positive")
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError("need 0 < warmup_steps < total_steps")


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to max_lr, then cosine decay to exactly zero."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if step <= config.warmup_steps:
        return config.max_lr * step / config.warmup_steps
    frac = (step - config.warmup_steps) / (config.total_steps - config.warmup_steps)
    return config.max_lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def _chroma_tail_start(seq: TupleSeq) -> int:
    """Element index where the chroma tail (or, failing that, the stop) begins."""
    return int(np.sum(seq.channels < seq.geom.band_size))


def _select_chunk_index(
    seq: TupleSeq,
    spec: ChunkSpec,
    policy: SelectionPolicy,
    rng: np.random.Generator,
    colorize: bool,
) -> int:
    num_chunks = len(enumerate_chunks(seq.num_elements, spec.chunk_size))
    weights = chunk_weights(num_chunks, policy)
    if colorize:
        candidates = chunks_intersecting_tail(seq, spec, _chroma_tail_start(seq))
        weights = weights[candidates] / weights[candidates].sum()
        return int(candidates[rng.choice(len(candidates), p=weights)])
    return int(rng.choice(num_chunks, p=weights))


def train(
    sequences: list[TupleSeq],
    model: SparseDctTransformer,
    chunk_spec: ChunkSpec,
    policy: SelectionPolicy,
    config: TrainConfig,
    log_path=None,
    colorize: bool = False,
) -> list[dict]:
    """Adam steps until the cumulative loss-masked token count meets the budget.

    Deterministic for a fixed seed (the example stream, dropout, and optimizer
    state all derive from it). A non-finite loss aborts after dumping the step
    diagnostics next to the metrics log.
    """
    if not sequences:
        raise ValueError("training needs at least one sequence")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.max_lr,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
    )
    model.train()
    metrics: list[dict] = []
    log_file = open(log_path, "w") if log_path else None
    tokens_seen = 0
    step = 0
    try:
        while tokens_seen < config.token_budget:
            step += 1
            lr = lr_schedule(step, config)
            for group in optimizer.param_groups:
                group["lr"] = lr

            examples = []
            while len(examples) < config.batch_size:
                seq = sequences[int(rng.integers(len(sequences)))]
                keep = keep_probability(seq.num_elements, config.max_filter_length)
                if rng.random() >= keep:
                    continue
                k = _select_chunk_index(seq, chunk_spec, policy, rng, colorize)
                examples.append(
                    build_training_example(seq, k, chunk_spec, chroma_only=colorize)
                )

            batch = collate_examples(examples, model.config)
            comps = model.loss_components(batch)
            total = comps["nll_channel"] + comps["nll_position"] + comps["nll_value"]
            tokens = comps["tokens"]
            if not torch.isfinite(total):
                dump = {
                    "step": step,
                    "lr": lr,
                    "tokens_seen": tokens_seen,
                    "nll_channel": float(comps["nll_channel"].item()),
                    "nll_position": float(comps["nll_position"].item()),
                    "nll_value": float(comps["nll_value"].item()),
                }
                dump_path = str(log_path) + ".diverged.json" if log_path else "diverged.json"
                with open(dump_path, "w") as f:
                    json.dump(dump, f, indent=2)
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}", dump_path=dump_path
                )

            optimizer.zero_grad()
            (total / max(tokens, 1)).backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()

            tokens_seen += tokens
            record = {
                "step": step,
                "loss": float(total.item()),
                "loss_per_token": float(total.item()) / max(tokens, 1),
                "lr": lr,
                "tokens": tokens_seen,
            }
            metrics.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file:
            log_file.close()
    return metrics


# ---------------------------------------------------------------------------
# Likelihood evaluation
# ---------------------------------------------------------------------------


@dataclass
class BpdReport:
    """Bits per subpixel, averaged over images, broken down by head and chunk.

    Per-chunk entries are contributions (an image without chunk k adds zero),
    so the per-chunk list sums to the total exactly.
    """

    total_bpd: float
    channel_bpd: float
    position_bpd: float
    value_bpd: float
    per_chunk_bpd: list[float] = field(default_factory=list)
    num_images: int = 0


@torch.no_grad()
def eval_bpd(
    sequences: list[TupleSeq],
    model: SparseDctTransformer,
    chunk_spec: ChunkSpec,
    colorize: bool = False,
) -> BpdReport:
    """Exact likelihood: every chunk of every sequence is enumerated."""
    if not sequences:
        raise ValueError("evaluation needs at least one sequence")
    model.eval()
    n = len(sequences)
    head_bits = np.zeros(3)
    chunk_bits: list[float] = []
    for seq in sequences:
        denom = seq.geom.num_subpixels
        chunks = enumerate_chunks(seq.num_elements, chunk_spec.chunk_size)
        for k in range(len(chunks)):
            ex = build_training_example(seq, k, chunk_spec, chroma_only=colorize)
            comps = model.loss_components(collate_examples([ex], model.config))
            nats = np.array(
                [
                    float(comps["nll_channel"].item()),
                    float(comps["nll_position"].item()),
                    float(comps["nll_value"].item()),
                ]
            )
            bits = nats / LN2 / denom
            head_bits += bits
            if k >= len(chunk_bits):
                chunk_bits.append(0.0)
            chunk_bits[k] += float(bits.sum())
    head_bits /= n
    return BpdReport(
        total_bpd=float(head_bits.sum()),
        channel_bpd=float(head_bits[0]),
        position_bpd=float(head_bits[1]),
        value_bpd=float(head_bits[2]),
        per_chunk_bpd=[b / n for b in chunk_bits],
        num_images=n,
    )


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def tiny_config() -> ModelConfig:
    return ModelConfig(
        hidden_size=8,
        num_heads=1,
        encoder_spec=[(1, 1)],
        channel_spec=[(1, 1)],
        position_spec=[(1, 1)],
        value_spec=[(1, 1)],
        block_size=2,
        grid_height=2,
        grid_width=2,
        clip=3,
        chunk_size=4,
        overlap=2,
        downsample_kernel=1,
        downsample_stride=1,
        dropout=0.0,
    )


def _tiny_geometry(config: ModelConfig) -> Geometry:
    return Geometry(
        height=config.grid_height * config.block_size,
        width=config.grid_width * config.block_size,
        block_size=config.block_size,
        quality=50,
        clip=config.clip,
    )


def random_sequence(
    geom: Geometry, num_triples: int, rng: np.random.Generator,
    ordering: Ordering = Ordering.GENERATION,
) -> TupleSeq:
    """Small random valid sequence (chroma restricted to even-even positions)."""
    bsq = geom.band_size
    slots = [(c, p) for c in range(bsq) for p in range(geom.num_positions)]
    for c in range(bsq, 3 * bsq):
        for p in range(geom.num_positions):
            if (p // geom.grid_w) % 2 == 0 and (p % geom.grid_w) % 2 == 0:
                slots.append((c, p))
    pick = rng.choice(len(slots), size=num_triples, replace=False)
    c = np.array([slots[i][0] for i in pick], dtype=np.int64)
    p = np.array([slots[i][1] for i in pick], dtype=np.int64)
    order = np.argsort(order_ranks(c, p, ordering, geom))
    v = rng.integers(1, geom.clip + 1, size=num_triples) * rng.choice([-1, 1], size=num_triples)
    return TupleSeq(c[order], p[order], v[order].astype(np.int64), ordering, geom, complete=True)


def grad_check(
    config: ModelConfig | None = None, seed: int = 0, step_size: float = 1e-5
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Runs in double precision on a batch containing both an overlap chunk and
    the first chunk. Relative error uses a small absolute floor so that
    honestly-zero gradients compare against finite-difference noise sanely.
    """
    config = config or tiny_config()
    torch.manual_seed(seed)
    model = SparseDctTransformer(config).double()
    model.eval()
    rng = np.random.default_rng(seed)
    geom = _tiny_geometry(config)
    seq = random_sequence(geom, 5, rng)  # 6 elements -> 2 chunks at C=4
    spec = ChunkSpec(chunk_size=config.chunk_size, overlap=config.overlap)
    examples = [
        build_training_example(seq, 0, spec),
        build_training_example(seq, 1, spec),
    ]
    batch = collate_examples(examples, config, dtype=torch.float64)

    def total_loss() -> torch.Tensor:
        comps = model.loss_components(batch)
        return comps["nll_channel"] + comps["nll_position"] + comps["nll_value"]

    loss = total_loss()
    model.zero_grad()
    loss.backward()

    worst = 0.0
    with torch.no_grad():
        for param in model.parameters():
            grad = param.grad
            flat = param.view(-1)
            gflat = grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step_size
                up = total_loss().item()
                flat[i] = orig - step_size
                down = total_loss().item()
                flat[i] = orig
                numeric = (up - down) / (2 * step_size)
                analytic = gflat[i].item()
                denom = max(abs(analytic) + abs(numeric), 1e-3)
                worst = max(worst, abs(analytic - numeric) / denom)
    return worst
