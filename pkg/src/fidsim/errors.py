"""Exception types shared across the package."""


class FidsimError(Exception):
    """Base class for all package errors."""


class ConfigError(FidsimError):
    """Bad or missing configuration (file, schema, or CLI argument)."""


class CorruptInputError(FidsimError):
    """An input file violates its declared format beyond row-level recovery."""


class RowError(FidsimError):
    """A single input row could not be parsed; carries the 0-based row index."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DimensionError(FidsimError):
    """Vector or matrix shape does not match the declared architecture."""


class LabelError(FidsimError):
    """Labels violate an operation's precondition (e.g. attack flows in benign-only training)."""


class NonFiniteGradientError(FidsimError):
    """A training step produced NaN or Inf gradients; carries the batch index."""

    def __init__(self, batch_index: int):
        super().__init__(f"non-finite gradient in batch {batch_index}")
        self.batch_index = batch_index


class NotReadyError(FidsimError):
    """A model is used before a required fitting step (threshold, normalizer, ...)."""


class TopologyError(FidsimError):
    """Simulated network topology cannot support the requested consensus parameters."""
