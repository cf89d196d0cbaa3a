"""Reader and writer for the big-endian IDX container used by MNIST-style digit sets.

Header: magic u32 (2049 labels, 2051 images), then one u32 extent per
dimension, then unsigned-byte payload in row-major order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ellelab.errors import BadMagicError, CountMismatchError, DatasetError, TruncatedPayloadError

from .datasets import Dataset

logger = logging.getLogger(__name__)

LABEL_MAGIC = 2049
IMAGE_MAGIC = 2051
MAGIC_DIMS = {LABEL_MAGIC: 1, IMAGE_MAGIC: 3}


@dataclass(frozen=True)
class IdxHeader:
    magic: int
    dims: Tuple[int, ...]

    @property
    def count(self) -> int:
        return self.dims[0]

    @property
    def payload_size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def nbytes(self) -> int:
        return 4 * (1 + len(self.dims))

    def encode(self) -> bytes:
        return struct.pack(f">I{len(self.dims)}I", self.magic, *self.dims)


def parse_header(buf: bytes, expected_magic: int, source: str = "<bytes>") -> IdxHeader:
    if len(buf) < 4:
        raise TruncatedPayloadError(f"{source}: file shorter than the magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{source}: magic {magic}, expected {expected_magic}")
    ndims = MAGIC_DIMS[magic]
    if len(buf) < 4 * (1 + ndims):
        raise TruncatedPayloadError(f"{source}: header needs {4 * (1 + ndims)} bytes, got {len(buf)}")
    dims = struct.unpack(f">{ndims}I", buf[4 : 4 * (1 + ndims)])
    return IdxHeader(magic, tuple(dims))


def _payload(buf: bytes, header: IdxHeader, source: str) -> np.ndarray:
    start = header.nbytes
    available = len(buf) - start
    if available < header.payload_size:
        raise TruncatedPayloadError(f"{source}: payload has {available} bytes, header promises {header.payload_size}")
    if available > header.payload_size:
        raise CountMismatchError(
            f"{source}: {available - header.payload_size} trailing bytes after the {header.payload_size} the header declares"
        )
    return np.frombuffer(buf, dtype=np.uint8, count=header.payload_size, offset=start).reshape(header.dims)


def read_idx(path: Path | str, expected_magic: int) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"IDX file {path} does not exist")
    buf = path.read_bytes()
    return _payload(buf, parse_header(buf, expected_magic, str(path)), str(path))


def load_idx(images_path: Path | str, labels_path: Path | str, classes: Optional[int] = None) -> Dataset:
    """Pixels scaled by 1/255 and flattened row-major to d = rows × cols."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images_path} holds {images.shape[0]} images but {labels_path} {labels.shape[0]} labels")
    n, rows, cols = images.shape
    inputs = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if classes is None:
        classes = max(2, int(y.max()) + 1 if y.size else 2)
    provenance = {"source": "idx", "images": str(images_path), "labels": str(labels_path), "rows": rows, "cols": cols}
    logger.info("Loaded %d IDX images of %dx%d from %s", n, rows, cols, images_path)
    return Dataset(inputs, y, Path(images_path).name, classes, provenance)


def quantize(inputs: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(inputs) * 255.0).astype(np.uint8)


def write_idx(
    dataset: Dataset,
    images_path: Path | str,
    labels_path: Path | str,
    shape: Optional[Tuple[int, int]] = None,
) -> None:
    """Export with pixels quantised to round(255·x); `shape` defaults to a square image."""
    n, d = dataset.inputs.shape
    if shape is None:
        side = int(round(d**0.5))
        shape = (side, d // side) if side * (d // side) == d else (1, d)
    rows, cols = shape
    if rows * cols != d:
        raise DatasetError(f"image shape {shape} does not cover d={d}")
    if dataset.labels.size and dataset.labels.max() > 255:
        raise DatasetError("IDX labels are single bytes; class ids above 255 cannot be written")
    for path, header, payload in (
        (images_path, IdxHeader(IMAGE_MAGIC, (n, rows, cols)), quantize(dataset.inputs)),
        (labels_path, IdxHeader(LABEL_MAGIC, (n,)), dataset.labels.astype(np.uint8)),
    ):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header.encode() + payload.tobytes())
