"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems -> 1,
data problems -> 2, numeric failures -> 3.
"""


class UwenhanceError(Exception):
    pass


class ConfigError(UwenhanceError):
    """Invalid or unknown configuration. Message names the offending field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class DataError(UwenhanceError):
    """Problems with datasets, files on disk, or manifests."""


class ShapeMismatchError(UwenhanceError):
    """Operands have incompatible shapes."""


class CheckpointMissingError(DataError):
    """Requested backbone or model weights are not available."""


class CheckpointCorruptError(DataError):
    """Checkpoint failed its checksum or version check."""


class NumericError(UwenhanceError):
    """Numeric failure during computation or training."""


class NonFiniteLossError(NumericError):
    """Training loss became NaN/Inf. Carries the last good checkpoint, if any."""

    def __init__(self, message, last_good_checkpoint=None):
        self.last_good_checkpoint = last_good_checkpoint
        super().__init__(message)


class DegenerateBatchError(NumericError):
    """Contrastive denominator vanished: anchor is feature-identical to every negative."""


class ZeroVarianceError(NumericError):
    """Correlation undefined because one input has zero variance."""
