from __future__ import annotations

import time
from contextlib import contextmanager
from typing import Any, Callable, Iterator, Tuple

from ellelab.errors import ContractError

PHASES = ("forward", "backward")


class StepTimer:
    """Accumulates wall-clock milliseconds per phase of one training step."""

    def __init__(self, clock: Callable[[], float] = time.perf_counter):
        self.clock = clock
        self.forward_ms = 0.0
        self.backward_ms = 0.0
        self._start = clock()

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        if name not in PHASES:
            raise ContractError(f"unknown timing phase {name!r}")
        begin = self.clock()
        try:
            yield
        finally:
            elapsed = (self.clock() - begin) * 1000.0
            if name == "forward":
                self.forward_ms += elapsed
            else:
                self.backward_ms += elapsed

    @property
    def wall_ms(self) -> float:
        return (self.clock() - self._start) * 1000.0


def time_split(run_step: Callable[[StepTimer], Any]) -> Tuple[float, float]:
    """Run one step under a fresh timer and return its (forward ms, backward ms)."""
    timer = StepTimer()
    run_step(timer)
    return timer.forward_ms, timer.backward_ms
