"""Exception types shared across the package."""


class RepBnnError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeMismatch(RepBnnError):
    """Tensor or graph dimensions are inconsistent with the operation."""


class NonDivisibleChannels(RepBnnError):
    """A channel count is not divisible by the replication factor beta."""


class CycleDetected(RepBnnError):
    """The graph contains a cycle."""


class ParseError(RepBnnError):
    """Model text could not be parsed."""

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {msg}" if line else msg)
        self.line = line
        self.col = col


class ValidationError(RepBnnError):
    """A graph violates one or more structural invariants."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class UnsupportedNode(RepBnnError):
    """A transformation pass met a node kind it has no rule for."""


class VerificationFailed(RepBnnError):
    """A before/after transform check did not hold."""


class NotRepGraph(RepBnnError):
    """The operation requires a replication-transformed graph."""


class UnknownLayer(RepBnnError):
    """The requested layer id does not exist or is not a replicated conv."""


class DatasetError(RepBnnError):
    """A dataset could not be located or decoded."""


class DivergedLoss(RepBnnError):
    """Training produced a non-finite loss."""
