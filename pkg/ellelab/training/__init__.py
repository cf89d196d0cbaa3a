from .benchmark import TIMING_METHODS, TimingRow, benchmark_methods
from .config import (
    CODetectorConfig,
    DataConfig,
    EvalConfig,
    ProbeConfig,
    RunConfig,
    RunSection,
    ScheduleConfig,
)
from .evaluation import CODetection, co_detect, evaluate
from .optimizer import SGD
from .records import EpochRecord, StepRecord
from .schedules import lr_at
from .timing import StepTimer, time_split
from .trainer import Trainer, TrainResult, train

__all__ = [
    "TIMING_METHODS", "TimingRow", "benchmark_methods",
    "CODetectorConfig", "DataConfig", "EvalConfig", "ProbeConfig", "RunConfig", "RunSection", "ScheduleConfig",
    "CODetection", "co_detect", "evaluate", "SGD", "EpochRecord", "StepRecord", "lr_at",
    "StepTimer", "time_split", "Trainer", "TrainResult", "train",
]
