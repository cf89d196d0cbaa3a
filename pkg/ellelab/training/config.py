from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

from ellelab.attacks import AttackSpec
from ellelab.errors import ContractError
from ellelab.models import ModelConfig
from ellelab.regularizers import RegularizerSpec

SCHEDULE_KINDS = ("short", "long", "long_cos", "constant")
DATA_SOURCES = ("synth", "idx")


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "short"
    lr_max: float = 0.2
    lr0: float = 0.1
    milestones: Tuple[int, ...] = (100, 150)
    decay: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.kind not in SCHEDULE_KINDS:
            raise ContractError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    input_dim: int = 2
    classes: int = 2
    n_per_class: int = 100
    test_per_class: int = 50
    margin: float = 0.5
    spread: float = 0.1
    seed: int = 0
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_size: Optional[int] = None
    test_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.source not in DATA_SOURCES:
            raise ContractError(f"data source must be one of {DATA_SOURCES}, got {self.source!r}")

    @property
    def dataset_id(self) -> str:
        if self.source == "idx":
            return f"idx:{self.train_images}"
        return f"synth:d{self.input_dim}-c{self.classes}-n{self.n_per_class}-s{self.seed}"


@dataclass(frozen=True)
class EvalConfig:
    attack: AttackSpec = field(default_factory=lambda: AttackSpec(kind="pgd", epsilon=0.0, steps=20))
    batch_size: int = 256
    max_examples: Optional[int] = None


@dataclass(frozen=True)
class ProbeConfig:
    every: int = 1
    n_samples: int = 4
    slice_size: int = 1024


@dataclass(frozen=True)
class CODetectorConfig:
    window: int = 5
    spike_factor: float = 10.0
    drop: float = 0.5

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ContractError(f"co_detector window must be >= 2, got {self.window}")
        if self.spike_factor <= 0:
            raise ContractError(f"co_detector spike_factor must be > 0, got {self.spike_factor}")
        if not 0 < self.drop <= 1:
            raise ContractError(f"co_detector drop must lie in (0, 1], got {self.drop}")


@dataclass(frozen=True)
class RunSection:
    name: str = "run"
    checkpoint_every: int = 0
    log_timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    data: DataConfig = field(default_factory=DataConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    epochs: int = 1
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    eval: EvalConfig = field(default_factory=EvalConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    co_detector: CODetectorConfig = field(default_factory=CODetectorConfig)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ContractError(f"weight_decay must be >= 0, got {self.weight_decay}")
