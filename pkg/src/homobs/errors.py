"""Exception hierarchy shared by all modules."""


class ObserverError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ObserverError, ValueError):
    pass


class SingularMatrixError(ObserverError, ArithmeticError):
    pass


class DomainError(ObserverError, ValueError):
    pass


class DefinitenessError(ObserverError, ValueError):
    pass


class MonotonicityError(ObserverError, ValueError):
    pass


class ConvergenceError(ObserverError, ArithmeticError):
    pass


class UnobservableError(ObserverError, ValueError):
    pass


class HomogenizationError(ObserverError, ArithmeticError):
    pass


class DegreeRangeError(ObserverError, ValueError):
    pass


class ParameterError(ObserverError, ValueError):
    pass


class SynthesisError(ObserverError, RuntimeError):
    pass


class LiftError(ObserverError, RuntimeError):
    pass


class LmiProblemError(ObserverError, ValueError):
    pass


class LmiInfeasibleError(ObserverError, RuntimeError):
    """Raised when the solver cannot certify feasibility.

    ``report`` carries the best margins found, for diagnostics.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalBlowupError(ObserverError, ArithmeticError):
    def __init__(self, message, time=None, observer=None):
        super().__init__(message)
        self.time = time
        self.observer = observer


class ConfigError(ObserverError, ValueError):
    pass
