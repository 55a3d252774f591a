# app/core/errors.py


class BalanceError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(BalanceError, ValueError):
    pass


class InvariantError(BalanceError, ValueError):
    pass


class PlayerLookupError(BalanceError, LookupError):
    pass


class OrderingError(BalanceError, ValueError):
    pass


class AggregationError(BalanceError, ValueError):
    pass


class SchemaError(BalanceError, ValueError):
    pass


class FitError(BalanceError, ValueError):
    pass


class DivergenceError(FitError):
    def __init__(self, epoch: int, learning_rate: float):
        super().__init__(
            f"training diverged at epoch {epoch} (learning rate {learning_rate:g})"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


class PredictionError(BalanceError, ValueError):
    pass


class DomainError(BalanceError, ValueError):
    pass


class FormatError(BalanceError, ValueError):
    pass


class ParameterError(BalanceError, ValueError):
    pass


class RankDeficiencyError(BalanceError, ValueError):
    pass


class EvaluationError(BalanceError, RuntimeError):
    pass


class GateError(BalanceError, ValueError):
    pass


class LeakageError(BalanceError, RuntimeError):
    pass
