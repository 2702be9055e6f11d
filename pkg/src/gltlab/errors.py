"""Exception hierarchy shared across the package."""


class GltError(Exception):
    """Base class for all package errors."""


# --- dataset ---

class DatasetError(GltError):
    pass


class MissingFile(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class IndexOutOfRange(DatasetError):
    pass


class DuplicateEdge(DatasetError):
    def __init__(self, u, v, first_line, second_line):
        super().__init__(
            f"duplicate undirected edge ({u},{v}) at lines {first_line} and {second_line}"
        )
        self.edge = (u, v)
        self.lines = (first_line, second_line)


class SelfLoopError(DatasetError):
    pass


class SplitOverlap(DatasetError):
    pass


class DegenerateConfig(DatasetError):
    pass


class IoError(DatasetError):
    pass


# --- autodiff / optimizer ---

class ShapeMismatch(GltError):
    pass


class NonFiniteValue(GltError):
    pass


class TapeConsumed(GltError):
    pass


class NotBackwarded(GltError):
    pass


class EmptyIndexSet(GltError):
    pass


# --- training / pruning / refinement ---

class NonFiniteLoss(GltError):
    """Training diverged; carries the partial trace collected so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EmptyActiveSet(GltError):
    pass


class EmptyCandidateSet(GltError):
    pass


class SetViolation(GltError):
    pass


class DegenerateMasks(GltError):
    pass


class UniverseMismatch(GltError):
    pass


# --- search ---

class BaselineDivergence(GltError):
    pass


class EmptyRecords(GltError):
    pass


class ConfigError(GltError):
    pass
