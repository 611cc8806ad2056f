# app/errors.py
"""
Exception hierarchy for the change-point toolkit.

Every error carries the CLI exit code of its family:
validation -> 2, numerical failure -> 3, I/O -> 4.
"""


class ChangepointError(Exception):
    exit_code = 1


# validation family

class ValidationFailed(ChangepointError, ValueError):
    exit_code = 2


class DimensionMismatch(ValidationFailed):
    pass


class CandidateOutOfRange(ValidationFailed):
    pass


class UnknownPreset(ValidationFailed):
    pass


class InsufficientRuns(ValidationFailed):
    pass


class Misalignment(ValidationFailed):
    pass


# numerical family

class NumericalFailure(ChangepointError, ArithmeticError):
    exit_code = 3


class NotPositiveDefinite(NumericalFailure):
    pass


class ConvergenceFailure(NumericalFailure):
    pass


class NoPositiveRoot(NumericalFailure):
    pass


class DegenerateSegment(NumericalFailure):
    pass


# I/O family

class DataIOError(ChangepointError, OSError):
    exit_code = 4
