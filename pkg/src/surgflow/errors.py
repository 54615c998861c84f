"""Exception types shared across the package."""


class SurgflowError(Exception):
    pass


class DimensionError(SurgflowError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(SurgflowError, ValueError):
    """A configuration value is invalid or inconsistent."""


class InputError(SurgflowError, ValueError):
    """Input data violates a precondition."""


class VocabError(SurgflowError, KeyError):
    """Unknown token or token id."""


class StateError(SurgflowError, RuntimeError):
    """Operation invalid in the current object state."""


class NumericError(SurgflowError, ArithmeticError):
    """A computation produced NaN or Inf."""
