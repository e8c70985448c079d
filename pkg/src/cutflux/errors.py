"""Exception types raised across the package."""


class CutFluxError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CutFluxError, ValueError):
    pass


class DegenerateCut(CutFluxError):
    """Interface touches a mesh vertex or produces a sliver below tolerance."""


class UnsupportedGeometry(CutFluxError):
    """Cut configuration outside the single-straight-segment-per-cell model."""


class SolverFailure(CutFluxError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystem(CutFluxError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class InconsistentPatch(CutFluxError):
    def __init__(self, message, node=None, phase=None, residual=None):
        super().__init__(message)
        self.node = node
        self.phase = phase
        self.residual = residual


class UnisolvenceFailure(CutFluxError):
    def __init__(self, message, cell=None, condition=None):
        super().__init__(message)
        self.cell = cell
        self.condition = condition
