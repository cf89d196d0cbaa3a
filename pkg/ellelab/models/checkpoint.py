"""Flat binary parameter checkpoints.

Layout (little-endian): magic b"ELLECKP1"; config as input_dim u32, hidden
count u32 then widths u32 each, classes u32, seed i64, activation as u16
length + ascii; tensor count u32; per tensor name as u16 length + utf-8,
rank u32, extents u32 each, then the f64 payload.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from ellelab.errors import CheckpointError

from .mlp import ModelConfig, ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"ELLECKP1"


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated at byte {self.pos}, wanted {n} more")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def encode_checkpoint(params: ModelParams) -> bytes:
    cfg = params.config
    parts = [MAGIC, struct.pack("<II", cfg.input_dim, len(cfg.hidden))]
    parts.append(struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden))
    parts.append(struct.pack("<Iq", cfg.classes, cfg.seed))
    parts.append(_pack_str(cfg.activation))
    parts.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.tensors.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> ModelParams:
    reader = _Reader(buf, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not an ellelab checkpoint (bad magic)")
    input_dim, n_hidden = reader.unpack("<II")
    hidden = reader.unpack(f"<{n_hidden}I")
    classes, seed = reader.unpack("<Iq")
    activation = reader.string()
    config = ModelConfig(input_dim=input_dim, hidden=hidden, classes=classes, activation=activation, seed=seed)
    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.string()
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        payload = reader.take(8 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    if reader.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - reader.pos} trailing bytes")
    return ModelParams(config, tensors)


def save_checkpoint(params: ModelParams, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(encode_checkpoint(params))
    logger.info("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path: Path | str) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return decode_checkpoint(path.read_bytes(), source=str(path))
