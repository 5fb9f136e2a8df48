"""Exception hierarchy shared by every module in the package."""


class SVGPError(Exception):
    """Base class for all package errors."""


class ShapeError(SVGPError, ValueError):
    pass


class FactorizationError(SVGPError, ArithmeticError):
    """Cholesky failed even at the top of the jitter ladder."""


class NonFiniteError(SVGPError, ArithmeticError):
    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class ArityError(SVGPError, ValueError):
    """Likelihood received the wrong number of latent outputs."""


class UnsupportedMean(SVGPError, TypeError):
    pass


class MissingLatentRow(SVGPError, IndexError):
    pass


class DivergenceError(SVGPError, RuntimeError):
    pass


class ConfigError(SVGPError, ValueError):
    pass


class DataError(SVGPError, ValueError):
    pass


class CheckpointVersionError(SVGPError, ValueError):
    pass
