"""Exception types shared across the package."""


class CtxfactError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(CtxfactError):
    """A required column is missing from an input file."""


class RowError(CtxfactError):
    """A data row could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(CtxfactError):
    """Invalid configuration or parameters."""


class ModelParseError(ConfigError):
    """A preference-model expression failed to parse."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ModelValidationError(ConfigError):
    """A preference model is incompatible with a dataspace."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class ConsistencyError(CtxfactError):
    """Cached factor statistics are out of date with the matrices."""


class SolverError(CtxfactError):
    """A linear system could not be solved."""


class PersistenceError(CtxfactError):
    """A model container is unreadable, truncated, or corrupt."""
