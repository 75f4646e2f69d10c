"""Exception types raised across fedlab."""


class FedlabError(Exception):
    pass


class ShapeError(FedlabError, ValueError):
    pass


class NumericError(FedlabError, ArithmeticError):
    pass


class ConfigError(FedlabError, ValueError):
    pass


class ProtocolError(FedlabError, RuntimeError):
    pass


class CacheError(FedlabError, ValueError):
    pass


class FormatError(FedlabError, ValueError):
    """Malformed binary payload; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UndefinedMetricError(FedlabError, ValueError):
    pass


class EmptyEvaluationError(FedlabError, ValueError):
    pass
