"""Exception hierarchy shared by all modules."""


class BnnError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(BnnError, ValueError):
    """An argument is outside its valid domain (negative std, p >= 1, ...)."""


class DimensionError(BnnError, ValueError):
    """Tensor shapes do not compose."""


class NumericError(BnnError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class TrainingDiverged(NumericError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ConfigError(BnnError, ValueError):
    """Experiment configuration is malformed or inconsistent."""


class DataError(BnnError):
    """Input data could not be read or is inconsistent."""


class IdxParseError(DataError, ValueError):
    pass


class BadMagicError(IdxParseError):
    pass


class TruncatedFileError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass
