"""Exception hierarchy shared by all stages."""


class QBilinearError(Exception):
    """Base class for package errors."""


class ValidationError(QBilinearError, ValueError):
    """Invalid user input (bad config value, inconsistent shapes, ...)."""


class IoError(QBilinearError, OSError):
    pass


class FormatError(QBilinearError, ValueError):
    pass


class BoundStateUnavailable(QBilinearError):
    pass


class GridUnconverged(QBilinearError):
    pass


class DegenerateTransition(QBilinearError):
    pass


class TooLarge(QBilinearError):
    pass


class StiffnessFailure(QBilinearError):
    pass


class NumericalFailure(QBilinearError):
    """Non-finite functional or state; ``iteration`` tells where it happened."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ShapeViolation(QBilinearError):
    pass


class StillUnstable(QBilinearError):
    pass


class SingularLyapunov(QBilinearError):
    pass


class NotConverged(QBilinearError):
    """Iterative solver hit its iteration cap.

    The best iterate and its residual are attached so callers can decide
    whether it is good enough.
    """

    def __init__(self, message, result=None, residual=None):
        super().__init__(message)
        self.result = result
        self.residual = residual


class RankDeficient(QBilinearError):
    pass


class SingularA22(QBilinearError):
    pass


class ProjectorSingular(QBilinearError):
    pass
