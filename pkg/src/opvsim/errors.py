"""Exception hierarchy shared by all modules."""


class OpvSimError(Exception):
    """Base class for every error raised by opvsim."""


class DimensionError(OpvSimError, ValueError):
    pass


class GeometryError(OpvSimError, ValueError):
    pass


class DomainError(OpvSimError, ValueError):
    """An argument lies outside the domain of a physical relation."""


class DivergenceError(OpvSimError, ArithmeticError):
    """Exponent overflow in the carrier statistics, i.e. a solver blow-up."""


class PhfFormatError(OpvSimError, ValueError):
    pass


class PreconditionerError(OpvSimError, ValueError):
    pass


class ConvergenceError(OpvSimError, RuntimeError):
    pass


class ConfigError(OpvSimError, ValueError):
    """Configuration problem. ``problems`` lists every issue found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
