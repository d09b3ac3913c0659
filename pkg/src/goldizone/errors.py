"""Exception types shared across the package."""


class GoldizoneError(Exception):
    pass


class InvalidInput(GoldizoneError):
    pass


class ShapeMismatch(GoldizoneError):
    pass


class ConvergenceFailure(GoldizoneError):
    """Iterative solver did not converge; carries the best iterate found."""

    def __init__(self, msg, best=None, residual=None):
        super().__init__(msg)
        self.best = best
        self.residual = residual


class DegenerateDistribution(GoldizoneError):
    pass


class DegenerateGradient(GoldizoneError):
    pass


class UnsupportedArchitecture(GoldizoneError):
    pass


class FormatError(GoldizoneError):
    pass


class ConfigError(GoldizoneError):
    pass
