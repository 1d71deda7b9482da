"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: config errors exit 2, format and
schema errors exit 3, numerical-check failures exit 4.
"""


class MomaError(Exception):
    """Base class for all engine errors."""


class DimensionError(MomaError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(MomaError, ValueError):
    """Input is finite but mathematically unusable (e.g. a zero-norm row)."""


class ContractError(MomaError, RuntimeError):
    """An API precondition was violated by the caller."""


class ConfigError(MomaError, ValueError):
    """Invalid configuration value, key or combination."""


class StateError(MomaError, RuntimeError):
    """Object used in a state that does not allow the operation."""


class InputError(MomaError, ValueError):
    """Invalid data passed to a metric or loss (label out of range, ...)."""


class FormatError(MomaError, ValueError):
    """A file on disk is truncated, corrupted or of an unknown version."""


class SchemaError(MomaError, ValueError):
    """A well-formed file does not match the expected parameter layout."""


class SpecError(ConfigError):
    """A synthetic task specification is internally inconsistent."""
