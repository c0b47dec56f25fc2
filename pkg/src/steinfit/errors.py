"""Exception hierarchy shared by every steinfit module."""


class SteinfitError(Exception):
    """Base class for all library errors."""


class DomainError(SteinfitError, ValueError):
    """A data point lies outside the model support."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class ParamError(SteinfitError, ValueError):
    """A parameter vector is malformed or outside the model's parameter domain."""


class EmptyData(SteinfitError, ValueError):
    pass


class InfeasiblePoint(SteinfitError, ValueError):
    """Some ratio value r_i = delta^T t_i + 1 is not strictly positive."""


class RankDeficient(SteinfitError, ArithmeticError):
    pass


class NotPositiveDefinite(SteinfitError, ArithmeticError):
    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class MaxIterations(SteinfitError, RuntimeError):
    pass


class Unbounded(SteinfitError, RuntimeError):
    """The ratio objective grows without bound (the Stein features share a sign pattern)."""


class NotConverged(SteinfitError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class Unidentifiable(SteinfitError, RuntimeError):
    pass


class CapabilityMissing(SteinfitError, NotImplementedError):
    pass


class DfError(SteinfitError, ValueError):
    """Goodness-of-fit test needs strictly more ratio parameters than model parameters."""


class UnknownDistribution(SteinfitError, KeyError):
    pass


class ConfigError(SteinfitError, ValueError):
    pass


class DataError(SteinfitError, ValueError):
    pass
