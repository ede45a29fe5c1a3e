"""Exception taxonomy shared across the package."""


class DualdecError(Exception):
    """Base class for all package errors."""


class ConfigError(DualdecError):
    """Invalid configuration value or violated config invariant."""


class ShapeError(ConfigError):
    """Operand shapes do not conform for the requested operation."""


class UsageError(DualdecError):
    """API misuse: wrong call order, missing gradients, bad arguments."""


class NumericError(DualdecError):
    """A non-finite value was produced by a numeric operation."""


class ValidationError(DualdecError):
    """Malformed or internally inconsistent data (files, qrels, triples)."""
