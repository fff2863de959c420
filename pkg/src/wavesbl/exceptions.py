"""Exception hierarchy.

Each family maps to a distinct CLI exit code (see ``wavesbl.cli``).
"""


class WaveSBLError(Exception):
    """Base class for all package errors."""

    exit_code = 1


# -- Markov paths -----------------------------------------------------------

class PathError(WaveSBLError):
    exit_code = 3


class InvalidGeneratorError(PathError, ValueError):
    pass


class InvalidPathError(PathError, ValueError):
    pass


class AbsorbingStateError(PathError):
    pass


class OutOfHorizonError(PathError, ValueError):
    pass


class ReducibleChainError(PathError):
    pass


# -- Forward solver ---------------------------------------------------------

class SolverError(WaveSBLError):
    exit_code = 4


class StabilityError(SolverError):
    pass


class DivergenceError(SolverError):
    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


# -- Data preparation -------------------------------------------------------

class DataError(WaveSBLError):
    exit_code = 5


class SegmentTooShortError(DataError):
    pass


class TermParseError(DataError, ValueError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class EmptySegmentError(DataError):
    pass


class DegenerateColumnError(DataError):
    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class TruthAlignmentError(DataError):
    pass


# -- Inference --------------------------------------------------------------

class InferenceError(WaveSBLError):
    exit_code = 6


class NumericalError(InferenceError):
    pass


class InnerSolverError(InferenceError):
    def __init__(self, message, theta=None, gap=None):
        super().__init__(message)
        self.theta = theta
        self.gap = gap


class NonDecreasingLossError(InferenceError):
    pass


class SingularFixedPointError(InferenceError, ValueError):
    pass


class InsufficientSamplesError(InferenceError):
    pass


class BoundUndefinedError(InferenceError, ValueError):
    pass


# -- I/O and configuration --------------------------------------------------

class ConfigError(WaveSBLError, ValueError):
    exit_code = 2


class ParseError(WaveSBLError):
    exit_code = 7

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line
