"""Exception hierarchy shared by every module of the package."""


class SpiderSQNError(Exception):
    """Base class for all errors raised by spidersqn."""


class DimensionError(SpiderSQNError, ValueError):
    """Vector lengths or feature indices do not agree."""


class ConfigError(SpiderSQNError, ValueError):
    """Invalid parameters or configuration."""


class ParseError(SpiderSQNError, ValueError):
    """Malformed LIBSVM input."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class OracleError(SpiderSQNError, IndexError):
    """Component index outside ``[0, n)``."""


class NumericalError(SpiderSQNError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericalError):
    """A solver run produced non-finite iterates or an exploding objective."""

    def __init__(self, iteration, reason):
        self.iteration = iteration
        self.reason = reason
        super().__init__(f"diverged at iteration {iteration}: {reason}")


class ContractError(SpiderSQNError, RuntimeError):
    """An operation was invoked outside its precondition (e.g. off an epoch boundary)."""
