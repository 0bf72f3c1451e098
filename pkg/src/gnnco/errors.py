"""Exception types shared across the package."""


class GnncoError(Exception):
    """Base class for package errors."""


class GraphParseError(GnncoError, ValueError):
    """A dataset file line could not be parsed (carries the line number)."""

    def __init__(self, message: str, path: str = "", line: int = 0):
        super().__init__(f"{path}:{line}: {message}" if path else message)
        self.path = path
        self.line = line


class GraphFormatError(GnncoError, ValueError):
    """Structurally invalid graph data (inconsistent feature counts, bad ids)."""


class DegenerateDegreeError(GnncoError, ValueError):
    """A node has degree zero where the normalization needs a positive degree."""


class ShapeError(GnncoError, ValueError):
    """Tensor dimensions do not line up."""


class EmptyMaskError(GnncoError, ValueError):
    """An operation received an empty node mask."""


class DivergedError(GnncoError, RuntimeError):
    """Training produced a non-finite loss."""


class InfeasibleTileError(GnncoError, ValueError):
    """No tile size candidate fits the sub-accelerator buffer share."""


class SimulationRefusedError(GnncoError, ValueError):
    """The simulator refused an invalid configuration; carries the violations."""

    def __init__(self, violations):
        super().__init__(
            "configuration invalid: " + "; ".join(str(v) for v in violations)
        )
        self.violations = list(violations)


class OracleCapError(GnncoError, ValueError):
    """Workload dimensions exceed the event-level oracle's size cap."""


class CheckpointMismatchError(GnncoError, ValueError):
    """A weight checkpoint does not match the configured supernet space."""
