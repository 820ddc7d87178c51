"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so new error types should
subclass one of the four below rather than raising bare exceptions.
"""


class LinkschedError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(LinkschedError):
    """Invalid configuration values or flag combinations."""

    exit_code = 2


class InputError(LinkschedError):
    """Unusable input data (missing labels, empty dataset, bad file)."""

    exit_code = 3


class NumericalError(LinkschedError):
    """Training aborted on non-finite loss or gradients."""

    exit_code = 4


class CompatibilityError(LinkschedError):
    """Checkpoint and requested settings disagree (quantizer bits, topology)."""

    exit_code = 5


class OracleSizeError(ConfigurationError):
    """Exhaustive search requested beyond its instance-size guard."""
