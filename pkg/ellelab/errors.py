"""Exception hierarchy shared by every ellelab module."""

from __future__ import annotations

from typing import Any, Dict, Optional


class EllelabError(Exception):
    """Base class for errors reported by the library and the CLI."""

    # Set by the CLI once the failing run is known.
    run_id: Optional[str] = None


class ShapeError(EllelabError, ValueError):
    def __init__(self, message: str, node_index: Optional[int] = None, op: Optional[str] = None):
        self.node_index = node_index
        self.op = op
        if node_index is not None:
            message = f"node {node_index} ({op}): {message}"
        super().__init__(message)


class NonFiniteError(EllelabError, ArithmeticError):
    """A tensor or an intermediate value contains NaN or Inf."""

    def __init__(self, message: str, node_index: Optional[int] = None, op: Optional[str] = None):
        self.node_index = node_index
        self.op = op
        if node_index is not None:
            message = f"node {node_index} ({op}): {message}"
        super().__init__(message)


class ContractError(EllelabError, ValueError):
    """A precondition of an operation does not hold."""


class LabelRangeError(EllelabError, ValueError):
    pass


class ConfigError(EllelabError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class DatasetError(EllelabError, ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class InfeasiblePlacementError(DatasetError):
    pass


class CheckpointError(EllelabError, ValueError):
    pass


class DivergenceError(EllelabError, RuntimeError):
    """Training produced a non-finite loss; `record` is the diagnostic step row."""

    def __init__(self, message: str, record: Optional[Dict[str, Any]] = None):
        self.record = record or {}
        super().__init__(message)
