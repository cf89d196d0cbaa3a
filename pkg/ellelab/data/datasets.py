from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from ellelab.errors import DatasetError, InfeasiblePlacementError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Inputs in [0, 1]^d with integer labels in [0, classes); validated on construction."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str
    classes: int
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels)
        if inputs.ndim != 2:
            raise DatasetError(f"{self.name}: inputs must be (n, d), got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise DatasetError(f"{self.name}: {inputs.shape[0]} inputs but labels of shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            raise DatasetError(f"{self.name}: labels must be integers, got {labels.dtype}")
        if self.classes < 2:
            raise DatasetError(f"{self.name}: need at least 2 classes, got {self.classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.classes):
            raise DatasetError(f"{self.name}: labels outside [0, {self.classes})")
        if not np.all(np.isfinite(inputs)) or (inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0)):
            raise DatasetError(f"{self.name}: inputs must be finite and lie in [0, 1]")
        inputs.setflags(write=False)
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def class_counts(self) -> Dict[int, int]:
        counts = np.bincount(self.labels, minlength=self.classes)
        return {int(k): int(v) for k, v in enumerate(counts)}

    def take(self, n: int) -> "Dataset":
        """The first n examples (used for fixed held-out probe slices)."""
        n = min(n, len(self))
        return Dataset(self.inputs[:n], self.labels[:n], f"{self.name}[:{n}]", self.classes, dict(self.provenance))


def blob_means(d: int, classes: int, margin: float) -> np.ndarray:
    """Class means on the cube diagonal, consecutive means `margin` apart in ℓ2."""
    if margin < 0:
        raise InfeasiblePlacementError(f"margin must be >= 0, got {margin}")
    span = (classes - 1) * margin
    if span > math.sqrt(d) + 1e-12:
        raise InfeasiblePlacementError(
            f"{classes} means {margin} apart need a diagonal of {span:.4g}; the unit cube in d={d} has {math.sqrt(d):.4g}"
        )
    offsets = (np.arange(classes) - (classes - 1) / 2.0) * margin / math.sqrt(d)
    return np.clip(0.5 + offsets[:, None] * np.ones((1, d)), 0.0, 1.0)


def synth_blobs(
    d: int,
    classes: int,
    n_per_class: int,
    margin: float,
    spread: float,
    seed: int,
) -> Dataset:
    if d < 1 or classes < 2 or n_per_class < 1:
        raise DatasetError(f"invalid blob shape d={d} classes={classes} n_per_class={n_per_class}")
    if spread < 0:
        raise DatasetError(f"spread must be >= 0, got {spread}")
    means = blob_means(d, classes, margin)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), n_per_class)
    jitter = rng.uniform(-1.0, 1.0, size=(labels.size, d)) * spread
    inputs = np.clip(means[labels] + jitter, 0.0, 1.0)
    provenance = {"source": "synth_blobs", "margin": margin, "spread": spread, "seed": seed}
    logger.debug("synth_blobs d=%d classes=%d n=%d seed=%d", d, classes, labels.size, seed)
    return Dataset(inputs, labels, f"blobs-d{d}-c{classes}", classes, provenance)


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Deterministically shuffled prefix of n examples."""
    if not 1 <= n <= len(dataset):
        raise DatasetError(f"subset size must lie in [1, {len(dataset)}], got {n}")
    order = np.random.default_rng(seed).permutation(len(dataset))[:n]
    picked = Dataset(
        dataset.inputs[order],
        dataset.labels[order],
        f"{dataset.name}-subset{n}",
        dataset.classes,
        dict(dataset.provenance),
    )
    picked.provenance.update({"subset_seed": seed, "subset_size": n, "class_counts": picked.class_counts()})
    return picked


def maybe_subset(dataset: Dataset, n: Optional[int], seed: int) -> Dataset:
    if n is None or n >= len(dataset):
        return dataset
    return subset(dataset, n, seed)
