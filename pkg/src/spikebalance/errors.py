"""Exception types shared across the package.

The CLI maps each category to its own exit code.
"""


class SpikeBalanceError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SpikeBalanceError, ValueError):
    """Invalid configuration value or file."""

    exit_code = 2


class EncodingError(SpikeBalanceError, ValueError):
    """Malformed genotype or binned series."""

    exit_code = 2


class SchemaError(SpikeBalanceError, ValueError):
    """A file does not carry the expected schema, version or channels."""

    exit_code = 3


class ArtifactIOError(SpikeBalanceError, OSError):
    """Output location unwritable or upstream artifacts missing."""

    exit_code = 4


class NumericalDivergence(SpikeBalanceError, ArithmeticError):
    """A simulated state became non-finite."""

    exit_code = 5

    def __init__(self, message, context=None):
        self.context = dict(context or {})
        if self.context:
            extra = ", ".join(f"{k}={v}" for k, v in self.context.items())
            message = f"{message} ({extra})"
        super().__init__(message)
