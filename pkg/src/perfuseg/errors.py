"""Exception hierarchy shared across the pipeline.

Exit-code mapping (see cli.py): ValidationError family -> 1,
IoError family -> 2, DivergenceError -> 3.
"""


class PerfusegError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(PerfusegError):
    """Invalid input values or violated preconditions."""


class ConfigError(ValidationError):
    """Bad configuration value."""


class AlignmentError(ValidationError):
    """Spatial dimensions of two inputs do not match."""


class LabelEncodingError(ValidationError):
    """Label map contains values outside {0, 76, 150, 255}."""


class ShapeError(ValidationError):
    """Tensor shapes incompatible with the requested operation."""


class UsageError(ValidationError):
    """API misuse (e.g. backward on a non-scalar)."""


class IoError(PerfusegError):
    """File-level failure (format, truncation, unwritable path)."""


class FormatError(IoError):
    """Malformed file header or structure."""


class IncompleteFileError(IoError):
    """File ends before a required element."""


class UnsupportedTransferSyntaxError(IoError):
    """DICOM transfer syntax other than Explicit VR Little Endian."""


class InconsistentAcquisitionError(ValidationError):
    """Frames do not form a complete (time x slice) grid."""


class DuplicateFrameError(ValidationError):
    """Two frames map to the same (slice, time) cell."""


class SkullStripError(ValidationError):
    """No brain region could be identified in a slice."""


class CheckpointError(IoError):
    """Checkpoint file does not match the model spec."""


class ModelConstructionError(ValidationError):
    """Layer chain of a model spec cannot be resolved."""


class UndefinedMetricError(ValidationError):
    """Metric has a zero denominator or an empty evaluation set."""


class DivergenceError(PerfusegError):
    """Training produced a non-finite loss."""
