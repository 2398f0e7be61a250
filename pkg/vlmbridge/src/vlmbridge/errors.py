"""Exception hierarchy and process exit codes for the adapter.

Job-file problems exit 2, undecodable or inconsistent inputs exit 3,
and failures to load or run a vision model exit 4.
"""

EXIT_OK = 0
EXIT_JOB = 2
EXIT_DATA = 3
EXIT_MODEL = 4


class AdapterError(Exception):
    """Base class for all adapter errors."""

    exit_code = EXIT_DATA


class JobError(AdapterError):
    """Invalid or inconsistent job description."""

    exit_code = EXIT_JOB


class DecodeFailure(AdapterError):
    """The video cannot be opened or does not match the expected geometry."""


class MissingRoi(AdapterError):
    """Feature extraction was asked to run without usable detections."""


class ModelLoadFailure(AdapterError):
    """A vision model or its weights could not be loaded."""

    exit_code = EXIT_MODEL
