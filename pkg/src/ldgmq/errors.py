"""Exception types shared across the package."""


class LdgmqError(Exception):
    """Base class for all package errors."""


class Contradiction(LdgmqError, ArithmeticError):
    """A variable-node product vanished everywhere (disjoint sure tuples)."""

    def __init__(self, msg="contradictory tuples", node=None, round_index=None):
        super().__init__(msg)
        self.node = node
        self.round_index = round_index


class DecimationContradiction(Contradiction):
    """Contradiction raised inside the quantizer, tagged with node and round."""


class NumericalFailure(LdgmqError):
    pass


class DomainError(LdgmqError, ValueError):
    pass


class ModelError(LdgmqError):
    pass


class SizeExceeded(LdgmqError):
    pass


class NonMonotoneBracket(LdgmqError):
    pass


class IterationBudgetExceeded(LdgmqError):
    pass


class ConfigError(LdgmqError, ValueError):
    pass
