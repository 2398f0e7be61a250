"""Detection and feature-extraction adapter for the lifting video pipeline.

Runs two-stage open-vocabulary detection over a trial video and exports
the results in the primary toolkit's file formats so they can be consumed
by its ingestion path without any shared process state.

Modules:
    job       job description loading and validation
    video     frame iteration over trial clips
    cropping  person crop rule used between the two detection stages
    adapter   detection and feature extraction orchestration
    synthetic deterministic color-key backend for tests
    zeroshot  zero-shot detector / segmenter / embedder backend
    cli       command line entry point
    errors    error taxonomy and exit codes
"""

from .adapter import (
    STAGE2_SCORE_THRESHOLD,
    extract_roi_features,
    make_backend,
    run_job,
    run_two_stage_detection,
)
from .cropping import CROP_MARGIN_FRACTION, person_crop_rect
from .errors import AdapterError, DecodeFailure, JobError, MissingRoi, ModelLoadFailure
from .job import AdapterJob, load_job

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "AdapterJob",
    "CROP_MARGIN_FRACTION",
    "DecodeFailure",
    "JobError",
    "MissingRoi",
    "ModelLoadFailure",
    "STAGE2_SCORE_THRESHOLD",
    "extract_roi_features",
    "load_job",
    "make_backend",
    "person_crop_rect",
    "run_job",
    "run_two_stage_detection",
]
