"""Exception hierarchy shared by all modules."""


class MeshMorphError(Exception):
    """Base class for domain errors (mapped to exit status 1 by the CLI)."""


class MeshError(MeshMorphError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateError(MeshMorphError):
    """Zero-measure cells/facets, vanishing normals and similar degeneracies."""


class SolverError(MeshMorphError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ConvergenceError(SolverError):
    pass


class RepairError(MeshMorphError):
    pass


class LineSearchError(MeshMorphError):
    pass


class ConstraintError(MeshMorphError):
    pass
