from typing import Any, Dict, Optional


class BVSolverError(Exception):
    """Base class for every error raised by the solver modules"""


class InvalidArgumentError(BVSolverError, ValueError):
    """Input violates a documented precondition"""


class CoefficientViolationError(BVSolverError):
    """A coefficient dropped below its stated bound at a quadrature point"""


class SingularSystemError(BVSolverError):
    """Zero or negative pivot while factoring a tridiagonal system"""


class SolverFailureError(BVSolverError):
    """The inner solver could not produce an iterate"""


class NonConvergenceError(BVSolverError):
    """Outer iteration budget exhausted; carries the last iterate for inspection"""

    def __init__(self, message: str, last_iterate: Any = None,
                 telemetry: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.telemetry = telemetry or {}


class StudyLevelError(BVSolverError):
    """A refinement level failed inside a convergence study"""

    def __init__(self, level: int, cause: BaseException):
        super().__init__(f"level k={level} failed: {cause}")
        self.level = level
        self.cause = cause
