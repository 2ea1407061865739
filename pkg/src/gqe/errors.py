"""Exception hierarchy shared across the package."""


class GQEError(Exception):
    """Base class for every error raised by this package."""


class ParseError(GQEError):
    """Malformed input file or document."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaError(GQEError):
    """A node, edge or query violates the type schema of the graph."""


class ShapeError(GQEError, ValueError):
    """Tensor dimensions do not agree."""


class DegenerateError(GQEError, ValueError):
    """A zero-norm vector or empty feature set where one is not allowed."""


class NumericError(GQEError, ArithmeticError):
    """A non-finite value appeared in a computation."""


class SamplingInfeasibleError(GQEError):
    """Rejection sampling exhausted its retry budget."""

    def __init__(self, structure, attempts):
        self.structure = structure
        self.attempts = attempts
        super().__init__(f"could not sample a {structure} query after {attempts} attempts")


class CapacityError(GQEError):
    """The requested construction does not fit the memory budget."""


class CheckpointError(GQEError):
    """Checkpoint is unreadable or was written by an incompatible version."""


class QueryValidationError(GQEError):
    """A query DAG failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class TrainingDivergedError(GQEError):
    """A non-finite loss appeared; ``params`` holds the last good state."""

    def __init__(self, message, params=None, log=None):
        self.params = params
        self.log = log
        super().__init__(message)
