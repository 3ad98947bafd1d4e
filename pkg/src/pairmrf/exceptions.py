"""Exception types raised by pairmrf."""


class PairMRFError(Exception):
    """Base class for library errors."""


class DomainError(PairMRFError, ValueError):
    """Input lies outside the supported domain (e.g. outside [0, 1])."""


class DegenerateFunctionError(PairMRFError, ValueError):
    """A gridded function has nonpositive mass and cannot be normalized."""


class InvalidWeightsError(PairMRFError, ValueError):
    """Edge appearance weights are incompatible with the parameters."""


class BPNotConverged(PairMRFError, RuntimeError):
    """Functional message passing hit its iteration cap."""

    def __init__(self, message, iterations=None, delta=None):
        super().__init__(message)
        self.iterations = iterations
        self.delta = delta


class StepFailure(PairMRFError, RuntimeError):
    """Backtracking line search could not find an acceptable step."""


class FitFailure(PairMRFError, RuntimeError):
    """An estimator failed to produce a solution."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NotConverged(PairMRFError, RuntimeError):
    """An iterative solver exceeded its iteration budget."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class GraphStructureError(PairMRFError, ValueError):
    """A graph lacks a structure an operation relies on (e.g. acyclicity)."""


class EvaluationError(PairMRFError, ValueError):
    """A risk or metric is undefined for the given model."""
