class QDDError(Exception):
    """Base class for all errors raised by qddopt."""


class GeometryError(QDDError):
    pass


class MeshMismatchError(QDDError):
    pass


class LinearSolverError(QDDError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class PositivityError(QDDError):
    """Density or weight dropped to (or below) its floor."""


class NonConvergenceError(QDDError):
    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LineSearchError(QDDError):
    pass


class ConfigError(QDDError):
    pass


class OutputError(QDDError):
    """Writing a result file failed; the message names the path."""
