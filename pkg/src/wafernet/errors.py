"""Exception hierarchy shared by all wafernet modules."""


class WaferNetError(Exception):
    """Base class for every error raised by this package."""


# -- tensor core ---------------------------------------------------------------

class DimensionError(WaferNetError, ValueError):
    pass


class ConfigurationError(WaferNetError, ValueError):
    pass


class LabelError(WaferNetError, ValueError):
    pass


class NonFiniteError(WaferNetError, FloatingPointError):
    pass


class TapeStateError(WaferNetError, RuntimeError):
    pass


# -- weight store --------------------------------------------------------------

class WeightFormatError(WaferNetError):
    pass


class MagicError(WeightFormatError):
    """Header magic or version byte does not match."""


class PayloadError(WeightFormatError):
    """File ends before a record is complete."""


class MissingTensorError(WeightFormatError, KeyError):
    pass


class ShapeMismatchError(WeightFormatError):
    pass


# -- data ----------------------------------------------------------------------

class DatasetError(WaferNetError):
    pass


class PGMFormatError(DatasetError):
    pass


class UnsupportedFormatError(PGMFormatError):
    pass


class ManifestError(DatasetError):
    pass


class UnknownLabelError(ManifestError):
    pass


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class SplitError(DatasetError):
    pass


class StatsError(WaferNetError, ValueError):
    pass


class CompositionError(WaferNetError):
    pass


class SpecError(WaferNetError, ValueError):
    pass


class UsageError(WaferNetError, RuntimeError):
    pass


# -- training / evaluation -----------------------------------------------------

class TrainingError(WaferNetError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class OptimizerError(WaferNetError, FloatingPointError):
    pass


class MetricsError(WaferNetError, ValueError):
    pass


class ConfigParseError(WaferNetError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StageError(WaferNetError):
    """Wraps an error raised inside an experiment pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
