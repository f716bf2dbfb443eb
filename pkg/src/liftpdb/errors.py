"""Exception hierarchy shared across the package."""


class LiftpdbError(Exception):
    """Base class for all errors raised by liftpdb."""


class ParseError(LiftpdbError):
    """Query text does not conform to the grammar."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class DataError(LiftpdbError):
    """Malformed input file (PDB, triples, model, query set)."""


class UnsupportedQueryError(LiftpdbError):
    """Query is outside the supported fragment."""


class UnsafeQueryError(LiftpdbError):
    """Lifted inference failed: the query has no polynomial-time plan.

    Carries the blocking subquery that reached the failure step.
    """

    def __init__(self, blocking, message=None):
        self.blocking = blocking
        super().__init__(message or f"query is unsafe; blocking subquery: {blocking}")


class OracleLimitError(LiftpdbError):
    """World enumeration would exceed the configured cap."""


class TrainingDivergedError(LiftpdbError):
    """Training loss became non-finite; lower the learning rate."""
