"""Exception hierarchy shared by the solvers and the CLI."""


class BiHiggsError(Exception):
    """Base class for all package errors."""


class ConstraintViolation(BiHiggsError):
    """A model does not satisfy the structural assumptions."""


class DomainError(BiHiggsError, ValueError):
    """A function was evaluated outside its domain of definition."""


class NonFinite(BiHiggsError, ValueError):
    pass


class GridError(BiHiggsError, ValueError):
    pass


class HypothesisViolation(BiHiggsError):
    """The gravitational bound 8*pi*G_N*N < 1 is violated."""


class SolverError(BiHiggsError):
    """Base class for failures inside an iterative solve."""


class BracketViolation(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class BracketAssemblyFailure(SolverError):
    pass


class SearchExhausted(SolverError):
    pass


class LadderStall(SolverError):
    pass


class FitDegenerate(BiHiggsError):
    def __init__(self, message, underflow_radius=None):
        super().__init__(message)
        self.underflow_radius = underflow_radius


class ConfigError(BiHiggsError):
    pass
