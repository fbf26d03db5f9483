"""Exception types shared across the package."""


class IntentGCError(Exception):
    """Base class for all package errors."""


class GraphFormatError(IntentGCError):
    """A graph, feature, or dictionary file violates the expected format."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class SchemaError(IntentGCError):
    """A feature schema is invalid or does not match the data."""


class ShapeError(IntentGCError):
    """Operands passed to a numeric primitive have incompatible shapes."""


class NonFiniteError(IntentGCError):
    """A numeric operation produced NaN or Inf."""


class ConfigError(IntentGCError):
    """A run configuration is missing, malformed, or inconsistent."""


class CheckpointError(IntentGCError):
    """A parameter checkpoint is missing, corrupt, or mismatched."""


class CategoryExhaustedError(IntentGCError):
    """Negative sampling could not find a valid item in the category."""


class EvalError(IntentGCError):
    """Metric computation received degenerate input."""
