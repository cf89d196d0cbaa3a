from __future__ import annotations

from typing import Tuple

from .datasets import Dataset, blob_means, maybe_subset, subset, synth_blobs
from .idx import IMAGE_MAGIC, LABEL_MAGIC, IdxHeader, load_idx, parse_header, quantize, read_idx, write_idx


def build_datasets(data) -> Tuple[Dataset, Dataset]:
    """Train and held-out sets described by a DataConfig."""
    if data.source == "synth":
        train = synth_blobs(data.input_dim, data.classes, data.n_per_class, data.margin, data.spread, data.seed)
        test = synth_blobs(data.input_dim, data.classes, data.test_per_class, data.margin, data.spread, data.seed + 1)
    else:
        train = load_idx(data.train_images, data.train_labels, classes=data.classes)
        test = load_idx(data.test_images, data.test_labels, classes=data.classes)
    return maybe_subset(train, data.train_size, data.seed), maybe_subset(test, data.test_size, data.seed + 1)


__all__ = [
    "Dataset", "blob_means", "build_datasets", "maybe_subset", "subset", "synth_blobs",
    "IMAGE_MAGIC", "LABEL_MAGIC", "IdxHeader", "load_idx", "parse_header", "quantize", "read_idx", "write_idx",
]
