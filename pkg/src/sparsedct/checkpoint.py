"""Versioned binary checkpoint: named float32 tensors, config JSON alongside."""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FileFormatError
from .model import ModelConfig, SparseDctTransformer

_MAGIC = b"SDCW"
_VERSION = 1


def config_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path, model: SparseDctTransformer) -> None:
    """Write model weights (little-endian float32) plus the config sidecar."""
    state = model.state_dict()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<BI", _VERSION, len(state)))
        for name, tensor in state.items():
            raw = name.encode("utf-8")
            data = tensor.detach().cpu().to(torch.float32).numpy()
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    config_path(path).write_text(json.dumps(model.config.to_dict(), indent=2))


def load_checkpoint(path) -> SparseDctTransformer:
    """Rebuild a model from a checkpoint file and its config sidecar."""
    cfg_file = config_path(path)
    if not cfg_file.exists():
        raise FileFormatError(f"missing config sidecar {cfg_file}")
    config = ModelConfig.from_dict(json.loads(cfg_file.read_text()))
    model = SparseDctTransformer(config)

    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise FileFormatError(f"bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<BI", raw, 4)
    if version != _VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    offset = 4 + 5
    tensors = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            numel = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=numel, offset=offset)
            offset += 4 * numel
            tensors[name] = torch.from_numpy(data.copy().reshape(shape))
    except (struct.error, ValueError) as e:
        raise FileFormatError(f"truncated checkpoint: {e}") from e

    expected = model.state_dict()
    if set(tensors) != set(expected):
        raise FileFormatError("checkpoint tensor names do not match the config")
    for name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise FileFormatError(f"tensor {name} has shape {tuple(tensor.shape)}, "
                                  f"expected {tuple(expected[name].shape)}")
    model.load_state_dict(tensors)
    return model
