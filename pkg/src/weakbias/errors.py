"""Exception types shared across the package."""


class WeakBiasError(Exception):
    """Base class for package-specific errors."""


class UsageError(WeakBiasError):
    """The caller asked for something incoherent (bad parameter combinations)."""


class InputError(WeakBiasError):
    """Bad input data: malformed files, schema violations, unknown ids or words."""


class NumericError(WeakBiasError):
    """Training or inference produced non-finite values."""
