"""Exception hierarchy shared by all solver modules."""


class ErgodicGamesError(Exception):
    """Base class. ``where`` names the module and node/time of failure."""

    def __init__(self, message, where=None):
        self.where = where
        if where:
            message = f"{message} [{where}]"
        super().__init__(message)


class InvalidInputError(ErgodicGamesError, ValueError):
    pass


class ConfigurationError(ErgodicGamesError):
    pass


class MonotonicityError(ErgodicGamesError):
    """The discretization would not be of positive type at some node."""


class ConvergenceError(ErgodicGamesError):
    def __init__(self, message, where=None, history=None):
        super().__init__(message, where)
        self.history = list(history or [])


class DivergenceError(ConvergenceError):
    pass


class CertificateViolationError(ErgodicGamesError):
    pass
