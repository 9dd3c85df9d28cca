"""Exception hierarchy shared by every module."""


class CMatOpError(Exception):
    """Base class for all anticipated failures raised by the library."""


class NonConvergence(CMatOpError):
    pass


class AsymmetricInput(CMatOpError):
    pass


class DimensionMismatch(CMatOpError):
    pass


class InfeasiblePoint(CMatOpError):
    pass


class NotASubgradient(CMatOpError):
    pass


class QPFailure(CMatOpError):
    pass


class InvalidSelection(CMatOpError):
    pass


class SingularJacobian(CMatOpError):
    def __init__(self, message: str, sigma_min: float = 0.0, report=None):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.report = report


class MaxIterations(CMatOpError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class RequiresNondegeneracy(CMatOpError):
    pass


class WrongProblemClass(CMatOpError):
    pass


class NotAKKTPoint(CMatOpError):
    pass


class NotInCriticalCone(CMatOpError):
    pass


class ProjectionFailure(CMatOpError):
    pass


class InstanceError(CMatOpError):
    """Malformed or inconsistent instance document; message names the field."""
