"""Exception hierarchy shared across the package, plus CLI exit codes."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_OPTIMIZATION = 5


class MortalityModelError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1
    category = "error"


class ConfigError(MortalityModelError):
    """Invalid configuration, parameters, or requested model structure."""

    exit_code = EXIT_CONFIG
    category = "config"


class SchemaError(ConfigError):
    """Input table does not match the declared factor schema."""


class ParameterError(ConfigError):
    """A numeric parameter is outside its valid domain."""


class DataError(MortalityModelError):
    """Invalid, inconsistent, or missing data values."""

    exit_code = EXIT_DATA
    category = "data"


class ConditioningError(MortalityModelError):
    """A linear-algebra factorization failed beyond the jitter budget."""

    exit_code = EXIT_NUMERIC
    category = "numeric"


class OptimizationError(MortalityModelError):
    """Hyperparameter search failed; carries per-start diagnostics."""

    exit_code = EXIT_OPTIMIZATION
    category = "optimization"

    def __init__(self, message, starts=None):
        super().__init__(message)
        self.starts = list(starts) if starts is not None else []


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented process exit code."""
    if isinstance(exc, MortalityModelError):
        return exc.exit_code
    if isinstance(exc, KeyError):
        return EXIT_DATA
    return 1


def category_for(exc: BaseException) -> str:
    if isinstance(exc, MortalityModelError):
        return exc.category
    if isinstance(exc, KeyError):
        return "data"
    return "error"
