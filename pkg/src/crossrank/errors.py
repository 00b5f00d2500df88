"""Exception hierarchy. Every contract violation raises a subclass of CrossrankError."""


class CrossrankError(Exception):
    """Base class for all crossrank errors."""


# panel loading / slicing
class MissingColumnError(CrossrankError):
    pass


class MalformedRowError(CrossrankError):
    pass


class DuplicatePeriodLabelOrderError(CrossrankError):
    """Period labels cannot be placed in a strict chronological order."""


class EmptyFileError(CrossrankError):
    pass


class AlreadyImputedError(CrossrankError):
    pass


class OrdinalOutOfRangeError(CrossrankError):
    pass


class MalformedLabelError(CrossrankError):
    pass


# feature construction
class EmptySeriesError(CrossrankError):
    pass


class DegenerateInputError(CrossrankError):
    pass


class ColumnMismatchError(CrossrankError):
    pass


# targets
class TooFewTargetsError(CrossrankError):
    pass


class TooFewValuesError(CrossrankError):
    pass


# linear models
class SingularSystemError(CrossrankError):
    pass


class NonFiniteError(CrossrankError):
    pass


class ShapeMismatchError(CrossrankError):
    pass


# metrics
class ConstantInputError(CrossrankError):
    pass


class LengthMismatchError(CrossrankError):
    pass


# selection
class DegenerateValidationError(CrossrankError):
    pass


class NoUsableWindowError(CrossrankError):
    pass


class AllCandidatesFailedError(CrossrankError):
    pass


# backtest / synth / cli
class InsufficientHistoryError(CrossrankError):
    pass


class InvalidConfigError(CrossrankError):
    pass
