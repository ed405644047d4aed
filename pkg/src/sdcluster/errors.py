"""Exception types shared across the package."""


class SDClusterError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SDClusterError):
    """Invalid configuration value, unknown key, or unsupported option."""


class MalformedFileError(SDClusterError):
    """A data file does not match its documented layout."""


class CorruptRecordError(SDClusterError):
    """A record inside an otherwise well-formed file is invalid."""


class EmptyInputError(SDClusterError):
    """An operation received an empty dataset or empty sequence."""


class InsufficientPointsError(SDClusterError):
    """Fewer points than clusters; assignment or repair impossible."""


class EmptyClusterError(SDClusterError):
    """Per-cluster statistics requested while some cluster has no members."""


class ShapeError(SDClusterError):
    """Tensor arguments have incompatible shapes."""


class LabelError(SDClusterError):
    """A class or cluster label lies outside its valid range."""


class NumericError(SDClusterError):
    """Non-finite values where finite numbers are required."""


class NumericAbortError(NumericError):
    """Training hit a non-finite loss and aborted.

    ``checkpoint_path`` points at the last checkpoint written before the
    abort (may be None when no epoch completed).
    """

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class ClusterCollapseWarning(UserWarning):
    """More than 90% of samples fell into a single cluster."""
