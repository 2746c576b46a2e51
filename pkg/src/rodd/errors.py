"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for input/validation
problems, 3 for numerical or domain failures.
"""


class RoddError(ValueError):
    exit_code = 2


class ValidationError(RoddError):
    exit_code = 2


class NumericalError(RoddError):
    exit_code = 3


class UnknownCategory(ValidationError):
    pass


class DuplicateCell(ValidationError):
    pass


class ArityMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class DomainMismatch(ValidationError):
    pass


class IncompleteBlock(ValidationError):
    pass


class EmptyInput(NumericalError):
    pass


class EmptyCube(NumericalError):
    pass


class NonPositiveMeasure(NumericalError):
    pass


class NonPositiveEstimate(NumericalError):
    pass


class NoValidPairs(NumericalError):
    pass


class InsufficientData(NumericalError):
    pass


class DegenerateLabels(NumericalError):
    pass
