"""
Exception types raised across the pipeline and the CLI exit codes they map to.
"""

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_GENERATION = 4
EXIT_EMPTY_OUTPUT = 5


class DeltaError(Exception):
    """Base class for all pipeline errors."""
    exit_code = EXIT_FAILURE


class ConfigError(DeltaError):
    """Run configuration is missing, malformed or out of range."""
    exit_code = EXIT_CONFIG


class DataError(DeltaError):
    """Input data cannot be used."""
    exit_code = EXIT_DATA


class SchemaError(DataError):
    """A named column is missing or has an unusable type."""


class EmptyDataError(DataError):
    """No rows remain after cleaning."""


class DegenerateLabelError(DataError, ValueError):
    """A label column has fewer than two classes."""


class StatisticsError(DataError, ValueError):
    """Too few rows or columns to compute feature statistics."""


class ExpressionError(DataError, ValueError):
    """Base class for RPN token-string errors."""


class VocabularyError(ExpressionError):
    """Token is not a feature reference, operator or framing token."""

    def __init__(self, message: str, position: int = None, token: str = None):
        super().__init__(message)
        self.position = position
        self.token = token


class MalformedRPNError(ExpressionError):
    """A segment does not stack-validate."""

    def __init__(self, message: str, position: int = None, token: str = None):
        super().__init__(message)
        self.position = position
        self.token = token


class FramingError(ExpressionError):
    """Missing or misplaced <SOS>/<SEP>/<EOS> tokens."""


class FeatureReferenceError(ExpressionError):
    """Feature reference outside the matrix column range."""


class NoValidActionError(DeltaError, ValueError):
    """Action mask excludes every action."""


class CovarianceError(DeltaError, ValueError):
    """Batch too small to estimate a covariance."""


class GenerationError(DeltaError):
    """No decoded candidate survived validation."""
    exit_code = EXIT_GENERATION

    def __init__(self, message: str, diagnostics: list = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, DeltaError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, IsADirectoryError)):
        return EXIT_DATA
    return EXIT_FAILURE
