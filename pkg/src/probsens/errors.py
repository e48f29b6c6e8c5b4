"""Exception hierarchy.

Configuration problems and numerical failures are kept apart so the command
line front end can map them onto distinct exit codes.
"""


class SensitivityError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SensitivityError, ValueError):
    """Invalid user input: bad distribution parameters, unknown keys, shapes."""


class NumericalError(SensitivityError, ArithmeticError):
    """A computation could not be completed on otherwise valid input."""


class EvaluationError(NumericalError):
    """Model or score evaluation produced non-finite values."""


class EstimationError(NumericalError):
    """A Monte Carlo or density estimate is undefined for the given batch."""


class DegenerateUtilityError(NumericalError):
    """A utility is (numerically) zero, so its normalised gradient is undefined."""


class DecompositionError(NumericalError):
    """A matrix factorisation failed (e.g. mass matrix not positive definite)."""


class ConditioningError(NumericalError):
    """A constraint matrix could not be made positive definite by regularisation."""


class DegeneracyError(NumericalError):
    """A repeated eigenvalue was found where a simple one is required."""
