"""Exception types shared across the package."""


class CvrsimError(Exception):
    """Base class for all package errors."""


class FeederFormatError(CvrsimError):
    """Raised by the feeder/profile parsers; carries the input location."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}"
            if col is not None:
                where += f", col {col}"
            where += ": "
        super().__init__(where + message)


class ValidationError(CvrsimError):
    """A model invariant does not hold."""


class TopologyError(ValidationError):
    """The line graph is not a tree rooted at the substation."""


class PfConvergenceError(CvrsimError):
    """A power-flow fixed point failed to converge within its iteration cap."""


class VoltageCollapseError(PfConvergenceError):
    """A load voltage fell below the collapse guard during a sweep."""


class LpUnboundedError(CvrsimError):
    """The LP is unbounded; with finite variable bounds this is a model bug."""


class CombinationLimitError(CvrsimError):
    """Exhaustive enumeration would exceed the combination guard."""


class LocalControlError(CvrsimError):
    """Degenerate data handed to a local controller (singular or nonpositive X)."""


class SimulationError(CvrsimError):
    """A scenario run aborted; message names the interval or tick."""
