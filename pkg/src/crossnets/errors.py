"""Exception types shared across the package.

Every error raised by the library is a subclass of CrossnetsError, so the
CLI can map exceptions to stable single-line error codes.
"""


class CrossnetsError(Exception):
    """Base class for all library errors."""


class ShapeError(CrossnetsError):
    """Operands have incompatible shapes. Message names both shapes."""


class ConfigError(CrossnetsError):
    """Invalid or inconsistent configuration value."""


class ContractError(CrossnetsError):
    """A caller-side precondition was violated (non-scalar loss,
    non-deterministic forward, non-binary labels, ...)."""


class EmbeddingLookupError(CrossnetsError):
    """Categorical id outside its field's cardinality."""


class ParseError(CrossnetsError):
    """Malformed delimited-text input. Message carries the line number."""


class SchemaError(CrossnetsError):
    """Delimited-text header does not match the expected feature schema."""


class MetricError(CrossnetsError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class TrainingError(CrossnetsError):
    """Training aborted (divergence). Carries the failing step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class CorruptionError(CrossnetsError):
    """Checkpoint payload does not match its manifest."""


class UnsupportedError(CrossnetsError):
    """Operation not defined for this block kind."""
