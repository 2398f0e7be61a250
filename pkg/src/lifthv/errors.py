"""Shared exception hierarchy and process exit codes.

Every error raised by this package derives from LiftError.  Errors are
grouped into three families that map onto CLI exit codes: configuration
problems (exit 2), malformed or inconsistent data (exit 3), and numeric
failures during filtering, training, or evaluation (exit 4).
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class LiftError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_DATA


class ConfigError(LiftError):
    """Invalid configuration value or inconsistent option combination."""

    exit_code = EXIT_CONFIG


class DataError(LiftError):
    """Malformed, missing, or mutually inconsistent input data."""

    exit_code = EXIT_DATA


class NumericError(LiftError):
    """Numeric failure: non-finite values, divergence, unstable filters."""

    exit_code = EXIT_NUMERIC


# -- data errors --------------------------------------------------------

class SchemaViolation(DataError):
    """A structured file does not match its declared layout."""


class MissingLandmark(DataError):
    """A trajectory lacks a landmark required by downstream geometry."""


class NonMonotonicTime(DataError):
    """Trajectory timestamps are not strictly increasing."""


class LengthMismatch(DataError):
    """Parallel arrays or file sections disagree on length."""


class EmptyOverlap(DataError):
    """Video frames and trajectory samples share no common time span."""


class BoxOutOfBounds(DataError):
    """A bounding box extends outside its image or crop."""


class BadRle(DataError):
    """A run-length mask is inconsistent with its declared grid."""


class MissingLifter(DataError):
    """No person detection is available to anchor a frame's crop."""


class FrameIndexMismatch(DataError):
    """Per-view features passed to fusion disagree on frame index."""


class DimMismatch(DataError):
    """A feature vector has the wrong dimensionality."""


class MissingViewData(DataError):
    """An evaluation cell requires a view absent from the dataset."""


class BehindCamera(DataError):
    """A world point projects from behind the camera plane."""


class TooFewParticipants(DataError):
    """Cross-validation needs at least two participants."""


class MissingArtifact(DataError):
    """A command needs an upstream file that has not been produced."""


# -- numeric errors ------------------------------------------------------

class NyquistViolation(NumericError):
    """Filter cutoff at or above half the sampling rate."""


class TooShort(NumericError):
    """Signal too short for stable zero-phase filtering."""


class NonFiniteInput(NumericError):
    """An input array contains NaN or infinity."""


class NonFiniteActivation(NumericError):
    """A forward or backward pass produced NaN or infinity."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""
