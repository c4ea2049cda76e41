"""Exception hierarchy shared by all decaylab modules.

Each error carries an ``exit_code`` used by the command-line front end:
2 for invalid input, 3 for cost caps, 4 for numerical failures.
"""


class DecayLabError(Exception):
    exit_code = 4


class ValidationError(DecayLabError, ValueError):
    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ParseError(ValidationError):
    pass


# map / IFS invariants
class NotAContraction(ValidationError):
    pass


class NotSelfMap(ValidationError):
    pass


class DegenerateDerivative(ValidationError):
    pass


class SharedFixedPoint(ValidationError):
    pass


class EndpointInAttractor(ValidationError):
    pass


class OrientationReversing(ValidationError):
    pass


class AlphabetTooLarge(ValidationError):
    exit_code = 3


class NotUNI(DecayLabError):
    pass


class BudgetExhausted(DecayLabError):
    exit_code = 3


class CostCapExceeded(DecayLabError):
    exit_code = 3


# operators
class StripExceeded(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class Overflow(DecayLabError):
    pass


class SeriesDiverging(DecayLabError):
    pass


# random model
class SeparationUnsatisfied(ValidationError):
    pass


class PrefixTooShort(ValidationError):
    pass


class EpsilonTooLarge(ValidationError):
    pass


class ConeViolation(ValidationError):
    pass


class DenseSetEmpty(DecayLabError):
    pass


# renewal
class LatticeDetected(DecayLabError):
    pass
