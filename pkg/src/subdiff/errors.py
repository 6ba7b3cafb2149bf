"""Exception hierarchy; the CLI maps these onto exit codes."""


class SubdiffError(Exception):
    exit_code = 1


class InvalidInputError(SubdiffError, ValueError):
    exit_code = 2


class SolverFailure(SubdiffError, RuntimeError):
    exit_code = 3


class EvaluationFailure(SolverFailure):
    """Quadrature did not converge; ``partial`` carries the best estimate."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class TruncationError(SolverFailure):
    def __init__(self, msg, bound=None):
        super().__init__(msg)
        self.bound = bound


class DivergenceError(SubdiffError):
    exit_code = 4
