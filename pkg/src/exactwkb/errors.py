"""Exception hierarchy shared by all modules."""


class ExactWKBError(Exception):
    """Base class for every error raised by the package."""


class QuadratureError(ExactWKBError):
    """Adaptive quadrature failed; ``point`` is the offending location if known."""

    def __init__(self, message, point=None, partial=None):
        super().__init__(message)
        self.point = point
        self.partial = partial


class RootFindingError(ExactWKBError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ResidueError(ExactWKBError):
    pass


class BoundaryZeroError(ExactWKBError):
    pass


class ModelValidationError(ExactWKBError):
    pass


class BranchError(ExactWKBError):
    """Eigen-continuation hit (or came too close to) a degeneracy."""

    def __init__(self, message, pair=None, t=None):
        super().__init__(message)
        self.pair = pair
        self.t = t


class CouplingError(ExactWKBError):
    pass


class DegenerateGraphError(ExactWKBError):
    def __init__(self, message, objects=()):
        super().__init__(message)
        self.objects = list(objects)


class IncompleteGraphError(ExactWKBError):
    pass


class SolverError(ExactWKBError):
    pass


class WindowNotConvergedError(SolverError):
    pass


class MethodPreconditionError(ExactWKBError):
    """A transition method was asked for something outside its domain."""
