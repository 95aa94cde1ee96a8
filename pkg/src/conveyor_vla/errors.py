"""Domain exceptions."""

from pathlib import Path


class ConveyorVLAError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(ConveyorVLAError, ValueError):
    """Operands or inputs do not have the shapes the operation requires."""


class NonFiniteError(ConveyorVLAError, FloatingPointError):
    """A forward value, loss or ODE state contains NaN or Inf."""


class UnattendableTokenError(ConveyorVLAError, ValueError):
    """An attention mask row has no attendable key."""


class TapeConsumedError(ConveyorVLAError, RuntimeError):
    """Backward was requested twice on the same recording."""


class LayoutError(ConveyorVLAError, ValueError):
    """Token counts disagree with the segment layout."""


class StaleCacheError(ConveyorVLAError, RuntimeError):
    """A KV cache was built from different weights or config."""


class UnknownTokenError(ConveyorVLAError, ValueError):
    """An instruction id or word is outside the closed vocabulary."""


class FormatError(ConveyorVLAError, ValueError):
    """A binary file has a wrong magic, an unsupported version or is truncated."""


class IncompatibleCheckpointError(ConveyorVLAError, ValueError):
    """A checkpoint does not match the environment or the requested model."""


class EmptyPoolError(ConveyorVLAError, LookupError):
    """A sampler was asked to draw from a dataset without episodes."""


class InvalidDrawError(ConveyorVLAError, ValueError):
    """A uniform draw lies outside [0, 1]."""


class TrainingDivergedError(ConveyorVLAError, RuntimeError):
    """Loss became non-finite; the last good parameters were written to disk."""

    def __init__(self, step: int, checkpoint: Path | None) -> None:
        self.step = step
        self.checkpoint = checkpoint
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {checkpoint}")
