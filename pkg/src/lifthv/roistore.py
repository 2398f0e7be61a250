"""Detection records, run-length masks, and crop geometry.

Detections come from a two-stage open-vocabulary pipeline: stage 1 finds
the lifting person in the full frame, stage 2 re-detects task regions
(hands, wrists, shoes, handled object) inside a margin-expanded crop of
the stage-1 box.  Records are stored per trial and view as JSON lines:
one header object, then one object per detection, all in canonical form
so identical inputs reproduce identical bytes.

Two feature-pipeline variants consume these records.  The box variant
("GD-Dv2") uses every stage-2 bounding box as an ROI.  The mask variant
("GD-SAM-Dv2") requires a segmentation mask per ROI and drops records
that lack one.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadRle,
    BoxOutOfBounds,
    MissingLifter,
    SchemaViolation,
)

IMAGE_WIDTH = 1280
IMAGE_HEIGHT = 720
CROP_MARGIN_FRACTION = 0.10

STAGE1_PROMPT = "person lifting"
STAGE2_PROMPT = "hand . wrist . shoe . wooden box . crate . holding object"
STAGE2_LABELS = ("hand", "wrist", "shoe", "wooden box", "crate", "holding object")
HANDLED_OBJECT_LABELS = ("wooden box", "crate", "holding object")

VARIANT_BOX = "GD-Dv2"
VARIANT_MASK = "GD-SAM-Dv2"
VARIANTS = (VARIANT_BOX, VARIANT_MASK)


@dataclass
class MaskRLE:
    """Run-length mask over a row-major grid local to a bounding box.

    ``runs`` alternate zeros and ones and start with a zero run (possibly
    of length 0); they must sum exactly to width * height.
    """

    width: int
    height: int
    runs: list

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise BadRle(f"non-positive mask grid {self.width}x{self.height}")
        if not self.runs:
            raise BadRle("empty run list")
        if any((not isinstance(r, int)) or r < 0 for r in self.runs):
            raise BadRle("runs must be non-negative integers")
        if sum(self.runs) != self.width * self.height:
            raise BadRle(
                f"runs sum to {sum(self.runs)}, grid has {self.width * self.height}"
            )

    def decode(self) -> np.ndarray:
        """Dense boolean grid, shape (height, width)."""
        self.validate()
        flat = np.zeros(self.width * self.height, dtype=bool)
        pos = 0
        value = False
        for run in self.runs:
            if value:
                flat[pos : pos + run] = True
            pos += run
            value = not value
        return flat.reshape(self.height, self.width)

    @staticmethod
    def encode(mask: np.ndarray) -> "MaskRLE":
        """Run-length encode a dense boolean grid."""
        mask = np.asarray(mask)
        if mask.ndim != 2 or mask.size == 0:
            raise BadRle(f"mask must be a non-empty 2-D grid, got shape {mask.shape}")
        flat = mask.reshape(-1).astype(bool)
        changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], changes, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return MaskRLE(width=mask.shape[1], height=mask.shape[0], runs=runs)

    def foreground_rect(self):
        """Tight (x0, y0, x1, y1) around foreground pixels, or None."""
        grid = self.decode()
        ys, xs = np.nonzero(grid)
        if ys.size == 0:
            return None
        return (
            float(xs.min()),
            float(ys.min()),
            float(xs.max()) + 1.0,
            float(ys.max()) + 1.0,
        )


@dataclass
class DetectionRecord:
    """One detection: a scored, labeled box, optionally with crop and mask.

    Stage-1 records hold full-frame person boxes.  Stage-2 records hold
    task-region boxes in full-frame coordinates along with the crop
    rectangle they were detected in; the mask variant adds a box-local
    run-length mask.
    """

    frame_index: int
    view_id: str
    stage: int
    label: str
    score: float
    bbox: tuple
    crop_rect: tuple | None = None
    mask: MaskRLE | None = None

    def validate(self, image_width: int = IMAGE_WIDTH, image_height: int = IMAGE_HEIGHT) -> None:
        if self.frame_index < 0:
            raise SchemaViolation(f"negative frame index {self.frame_index}")
        if self.stage not in (1, 2):
            raise SchemaViolation(f"stage must be 1 or 2, got {self.stage}")
        if not 0.0 <= self.score <= 1.0 or not math.isfinite(self.score):
            raise SchemaViolation(f"score out of [0, 1]: {self.score}")
        _check_box(self.bbox, image_width, image_height, "bbox")
        if self.stage == 2:
            if self.crop_rect is None:
                raise SchemaViolation("stage-2 record missing crop_rect")
            _check_box(self.crop_rect, image_width, image_height, "crop_rect")
        if self.mask is not None:
            self.mask.validate()
            bw = self.bbox[2] - self.bbox[0]
            bh = self.bbox[3] - self.bbox[1]
            if self.mask.width > bw + 1e-6 or self.mask.height > bh + 1e-6:
                raise BadRle(
                    f"mask grid {self.mask.width}x{self.mask.height} exceeds "
                    f"bbox {bw:.1f}x{bh:.1f}"
                )


def _check_box(box, image_width: int, image_height: int, name: str) -> None:
    if box is None or len(box) != 4:
        raise SchemaViolation(f"{name} must have 4 coordinates")
    x0, y0, x1, y1 = (float(v) for v in box)
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        raise SchemaViolation(f"{name} has non-finite coordinates")
    if not (x0 < x1 and y0 < y1):
        raise BoxOutOfBounds(f"{name} is empty or inverted: {box}")
    if x0 < 0 or y0 < 0 or x1 > image_width or y1 > image_height:
        raise BoxOutOfBounds(
            f"{name} {box} outside {image_width}x{image_height} image"
        )


# -- crop geometry --------------------------------------------------------

def crop_rect(
    bbox,
    margin_fraction: float = CROP_MARGIN_FRACTION,
    image_width: int = IMAGE_WIDTH,
    image_height: int = IMAGE_HEIGHT,
) -> tuple:
    """Expand a box by a fraction of its size per side, clamped to the image."""
    _check_box(bbox, image_width, image_height, "bbox")
    x0, y0, x1, y1 = (float(v) for v in bbox)
    mx = (x1 - x0) * margin_fraction
    my = (y1 - y0) * margin_fraction
    return (
        max(0.0, x0 - mx),
        max(0.0, y0 - my),
        min(float(image_width), x1 + mx),
        min(float(image_height), y1 + my),
    )


def remap_to_frame(bbox_in_crop, crop) -> tuple:
    """Translate a crop-local box into full-frame coordinates."""
    cx0, cy0, cx1, cy1 = (float(v) for v in crop)
    x0, y0, x1, y1 = (float(v) for v in bbox_in_crop)
    if not (x0 < x1 and y0 < y1):
        raise BoxOutOfBounds(f"crop-local box empty or inverted: {bbox_in_crop}")
    eps = 1e-6
    if x0 < -eps or y0 < -eps or x1 > cx1 - cx0 + eps or y1 > cy1 - cy0 + eps:
        raise BoxOutOfBounds(
            f"crop-local box {bbox_in_crop} outside crop of size "
            f"{cx1 - cx0:.1f}x{cy1 - cy0:.1f}"
        )
    return (cx0 + x0, cy0 + y0, cx0 + x1, cy0 + y1)


def select_lifter(frame_records: list) -> DetectionRecord:
    """Highest-scoring stage-1 person box; ties keep the earliest record."""
    best = None
    for rec in frame_records:
        if rec.stage != 1:
            continue
        if best is None or rec.score > best.score:
            best = rec
    if best is None:
        raise MissingLifter("no stage-1 person detection in frame")
    return best


# -- variant resolution -----------------------------------------------------

@dataclass
class RoiSet:
    """Stage-2 ROIs usable by one pipeline variant for one frame.

    ``partial`` marks frames where the mask variant dropped maskless
    records; ``valid`` is False when nothing usable remains.
    """

    rois: list = field(default_factory=list)
    valid: bool = False
    partial: bool = False


def resolve_frame_rois(frame_records: list, variant: str) -> RoiSet:
    """Select the stage-2 records a pipeline variant can consume."""
    if variant not in VARIANTS:
        raise SchemaViolation(f"unknown pipeline variant {variant!r}")
    rois = []
    dropped = 0
    for rec in frame_records:
        if rec.stage != 2:
            continue
        if variant == VARIANT_MASK and rec.mask is None:
            dropped += 1
            continue
        rois.append(rec)
    return RoiSet(rois=rois, valid=bool(rois), partial=dropped > 0)


def handled_object_roi(rois: list):
    """Highest-scoring handled-object ROI among resolved records, or None."""
    best = None
    for rec in rois:
        if rec.label not in HANDLED_OBJECT_LABELS:
            continue
        if best is None or rec.score > best.score:
            best = rec
    return best


# -- JSON lines IO ----------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def record_to_json(rec: DetectionRecord) -> dict:
    doc = {
        "frame_index": rec.frame_index,
        "view_id": rec.view_id,
        "stage": rec.stage,
        "label": rec.label,
        "score": rec.score,
        "bbox": [float(v) for v in rec.bbox],
        "crop_rect": None if rec.crop_rect is None else [float(v) for v in rec.crop_rect],
        "mask": None
        if rec.mask is None
        else {"width": rec.mask.width, "height": rec.mask.height, "runs": rec.mask.runs},
    }
    return doc


def record_from_json(doc: dict) -> DetectionRecord:
    try:
        mask_doc = doc.get("mask")
        mask = (
            None
            if mask_doc is None
            else MaskRLE(
                width=int(mask_doc["width"]),
                height=int(mask_doc["height"]),
                runs=[int(r) for r in mask_doc["runs"]],
            )
        )
        crop = doc.get("crop_rect")
        return DetectionRecord(
            frame_index=int(doc["frame_index"]),
            view_id=str(doc["view_id"]),
            stage=int(doc["stage"]),
            label=str(doc["label"]),
            score=float(doc["score"]),
            bbox=tuple(float(v) for v in doc["bbox"]),
            crop_rect=None if crop is None else tuple(float(v) for v in crop),
            mask=mask,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad detection record: {doc!r}") from exc


@dataclass
class DetectionFile:
    """Parsed detection file: provenance header plus per-frame records."""

    header: dict
    records: list

    def records_by_frame(self) -> dict:
        by_frame: dict = {}
        for rec in self.records:
            by_frame.setdefault(rec.frame_index, []).append(rec)
        return by_frame

    @property
    def image_size(self) -> tuple:
        return (
            int(self.header.get("image_width", IMAGE_WIDTH)),
            int(self.header.get("image_height", IMAGE_HEIGHT)),
        )


def save_detection_records(path, header: dict, records: list) -> None:
    """Write header and records as canonical JSON lines."""
    doc = dict(header)
    doc.setdefault("kind", "detections")
    doc.setdefault("version", 1)
    doc.setdefault("image_width", IMAGE_WIDTH)
    doc.setdefault("image_height", IMAGE_HEIGHT)
    doc.setdefault("stage1_prompt", STAGE1_PROMPT)
    doc.setdefault("stage2_prompt", STAGE2_PROMPT)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_canonical(doc) + "\n")
        for rec in records:
            fh.write(_canonical(record_to_json(rec)) + "\n")


def load_detection_records(path) -> DetectionFile:
    """Read and validate a detection file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise SchemaViolation(f"{path}: empty detection file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: unreadable header line") from exc
    if not isinstance(header, dict) or header.get("kind") != "detections":
        raise SchemaViolation(f"{path}: first line is not a detection header")
    width = int(header.get("image_width", IMAGE_WIDTH))
    height = int(header.get("image_height", IMAGE_HEIGHT))
    records = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            doc = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{path}:{lineno}: unreadable record") from exc
        rec = record_from_json(doc)
        try:
            rec.validate(width, height)
        except (SchemaViolation, BoxOutOfBounds, BadRle) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
        records.append(rec)
    return DetectionFile(header=header, records=records)
