class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ConfigurationError(RuntimeError):
    pass


class ContractError(RuntimeError):
    pass


class TapeStateError(RuntimeError):
    pass


class CommandError(RuntimeError):
    pass


class InvalidJoint(ValueError):
    pass


class EnumerationTooLarge(RuntimeError):
    def __init__(self, terms: int, limit: int):
        self.terms = terms
        self.limit = limit
        super().__init__(
            "Exact enumeration needs {} negative configurations (limit {}); "
            "use monte_carlo_infonce() instead.".format(terms, limit)
        )


class DatasetFormatError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


class NonFiniteGradient(RuntimeError):
    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__("Non-finite gradient for parameter {}".format(parameter))


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss_total: float):
        self.epoch = epoch
        self.loss_total = loss_total
        super().__init__(
            "Training diverged at epoch {} (loss_total={})".format(epoch, loss_total)
        )


class VerificationFailed(RuntimeError):
    pass
