"""Adapter job descriptions.

One job covers one (video, view, trial, pipeline variant) combination
and names the two output files. The detection prompts are part of the
pipeline definition, not of the job.
"""

import json
from dataclasses import dataclass, field

from .errors import JobError

VARIANTS = ("GD-Dv2", "GD-SAM-Dv2")
VIEW_IDS = ("V1", "V2", "V3")
BACKENDS = ("zeroshot", "synthetic")
DEVICES = ("cpu", "cuda")

_REQUIRED = ("video", "view_id", "trial_id", "variant", "detections_out", "features_out")
_OPTIONAL = ("device", "backend")


@dataclass
class AdapterJob:
    """Inputs and outputs of one adapter run."""

    video: str
    view_id: str
    trial_id: str
    variant: str
    detections_out: str
    features_out: str
    device: str = "cpu"
    backend: str = "zeroshot"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise JobError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.view_id not in VIEW_IDS:
            raise JobError(f"view_id must be one of {VIEW_IDS}, got {self.view_id!r}")
        if self.backend not in BACKENDS:
            raise JobError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.device not in DEVICES:
            raise JobError(f"device must be one of {DEVICES}, got {self.device!r}")
        if not self.trial_id:
            raise JobError("trial_id must be non-empty")
        for name in ("video", "detections_out", "features_out"):
            if not getattr(self, name):
                raise JobError(f"{name} must be a non-empty path")

    @property
    def wants_masks(self) -> bool:
        return self.variant == "GD-SAM-Dv2"


def load_job(path, overrides: dict | None = None) -> AdapterJob:
    """Read a job file, apply overrides, and validate."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise JobError(f"cannot read job file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise JobError(f"job file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise JobError("job file must hold one JSON object")
    unknown = set(doc) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise JobError(f"unknown job keys: {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise JobError(f"job file missing keys: {missing}")
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    job = AdapterJob(**{k: str(v) for k, v in doc.items()})
    job.validate()
    return job
