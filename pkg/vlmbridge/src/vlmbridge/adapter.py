"""Two-stage detection and ROI feature extraction for one job.

The adapter shares nothing with its consumer at runtime except files:
detection records as JSON lines and ROI embeddings in the binary store
format, both written through the consumer package's serializers so the
layouts cannot drift.
"""

import logging
import math
import os

import cv2
import numpy as np

from lifthv.featpipe import save_feature_store
from lifthv.roistore import (
    DetectionRecord,
    MaskRLE,
    load_detection_records,
    resolve_frame_rois,
    save_detection_records,
)

from .cropping import CROP_MARGIN_FRACTION, person_crop_rect
from .errors import MissingRoi
from .job import AdapterJob
from .synthetic import SyntheticBackend
from .video import FRAME_HEIGHT, FRAME_WIDTH, iter_frames
from .zeroshot import ZeroShotBackend

log = logging.getLogger("vlmbridge")

STAGE2_SCORE_THRESHOLD = 0.25
EMBED_SIZE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def make_backend(job: AdapterJob):
    if job.backend == "synthetic":
        return SyntheticBackend(device=job.device)
    return ZeroShotBackend(device=job.device, with_segmenter=job.wants_masks)


def _remap(bbox_local, crop) -> tuple:
    x0, y0, x1, y1 = bbox_local
    return (crop[0] + x0, crop[1] + y0, crop[0] + x1, crop[1] + y1)


def _clamp_box(bbox, width: int, height: int) -> tuple | None:
    x0 = max(0.0, min(float(bbox[0]), float(width) - 1.0))
    y0 = max(0.0, min(float(bbox[1]), float(height) - 1.0))
    x1 = min(float(width), max(float(bbox[2]), x0 + 1.0))
    y1 = min(float(height), max(float(bbox[3]), y0 + 1.0))
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return (x0, y0, x1, y1)


def run_two_stage_detection(job: AdapterJob, backend=None) -> str:
    """Detect the lifter and task regions on every frame; write the records."""
    job.validate()
    backend = backend or make_backend(job)
    records = []
    frames = 0
    for index, frame in iter_frames(job.video):
        frames += 1
        people = []
        for bbox, score in backend.detect_person(frame):
            clamped = _clamp_box(bbox, FRAME_WIDTH, FRAME_HEIGHT)
            if clamped is not None:
                people.append((clamped, score))
        if not people:
            continue
        for bbox, score in people:
            records.append(
                DetectionRecord(
                    frame_index=index,
                    view_id=job.view_id,
                    stage=1,
                    label="person lifting",
                    score=score,
                    bbox=bbox,
                )
            )
        lifter_box = people[0][0]
        crop = person_crop_rect(
            lifter_box, CROP_MARGIN_FRACTION, FRAME_WIDTH, FRAME_HEIGHT
        )
        cx0, cy0 = int(math.floor(crop[0])), int(math.floor(crop[1]))
        cx1, cy1 = int(math.ceil(crop[2])), int(math.ceil(crop[3]))
        crop_image = frame[cy0:cy1, cx0:cx1]
        for label, bbox_local, score in backend.detect_rois(crop_image):
            if score < STAGE2_SCORE_THRESHOLD:
                continue
            bbox = _clamp_box(
                _remap(bbox_local, (cx0, cy0, cx1, cy1)), FRAME_WIDTH, FRAME_HEIGHT
            )
            if bbox is None:
                continue
            mask = None
            if job.wants_masks:
                grid = backend.segment(frame, bbox)
                if grid.size == 0 or not grid.any():
                    continue
                mask = MaskRLE.encode(grid)
            records.append(
                DetectionRecord(
                    frame_index=index,
                    view_id=job.view_id,
                    stage=2,
                    label=label,
                    score=score,
                    bbox=bbox,
                    crop_rect=crop,
                    mask=mask,
                )
            )
    header = {
        "view_id": job.view_id,
        "trial_id": job.trial_id,
        "variant": job.variant,
        "backend": backend.name,
        "models": backend.model_ids,
        "device": job.device,
        "frame_count": frames,
        "stage2_score_threshold": STAGE2_SCORE_THRESHOLD,
        "crop_margin_fraction": CROP_MARGIN_FRACTION,
    }
    os.makedirs(os.path.dirname(os.path.abspath(job.detections_out)), exist_ok=True)
    save_detection_records(job.detections_out, header, records)
    log.info("%s: %d records over %d frames", job.detections_out, len(records), frames)
    return job.detections_out


def _int_box(bbox) -> tuple:
    x0, y0 = int(math.floor(bbox[0])), int(math.floor(bbox[1]))
    return x0, y0, x0 + max(1, int(bbox[2] - bbox[0])), y0 + max(1, int(bbox[3] - bbox[1]))


def _normalize(patch_bgr: np.ndarray) -> np.ndarray:
    resized = cv2.resize(patch_bgr, (EMBED_SIZE, EMBED_SIZE), interpolation=cv2.INTER_AREA)
    rgb = resized[:, :, ::-1].astype(np.float32) / 255.0
    return (rgb - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )


def roi_patch(frame: np.ndarray, record: DetectionRecord, use_mask: bool) -> np.ndarray:
    """Cut one ROI from the frame, zero-filling background under the mask."""
    x0, y0, x1, y1 = _int_box(record.bbox)
    patch = frame[y0:y1, x0:x1].copy()
    if use_mask and record.mask is not None:
        grid = record.mask.decode()
        h = min(grid.shape[0], patch.shape[0])
        w = min(grid.shape[1], patch.shape[1])
        keep = np.zeros(patch.shape[:2], dtype=bool)
        keep[:h, :w] = grid[:h, :w]
        patch[~keep] = 0
    return patch


def extract_roi_features(job: AdapterJob, backend=None) -> str:
    """Embed every ROI the job's variant resolves; write the feature store."""
    job.validate()
    backend = backend or make_backend(job)
    detfile = load_detection_records(job.detections_out)
    by_frame = detfile.records_by_frame()
    if not by_frame:
        raise MissingRoi(f"{job.detections_out} holds no records")

    frame_lookup = {}
    for index, frame in iter_frames(job.video):
        if index in by_frame:
            frame_lookup[index] = frame

    entries = []
    rows = []
    for index in sorted(by_frame):
        rois = resolve_frame_rois(by_frame[index], job.variant)
        if not rois.valid:
            continue
        frame = frame_lookup.get(index)
        if frame is None:
            raise MissingRoi(f"frame {index} listed in records but absent from video")
        batch = [
            _normalize(roi_patch(frame, rec, use_mask=job.wants_masks))
            for rec in rois.rois
        ]
        vectors = backend.embed_batch(batch)
        for rec, vec in zip(rois.rois, vectors):
            entries.append((index, rec.label))
            rows.append(vec)
    if not rows:
        raise MissingRoi(f"{job.detections_out}: no ROI usable by {job.variant}")

    header = {
        "view_id": job.view_id,
        "trial_id": job.trial_id,
        "variant": job.variant,
        "backend": backend.name,
        "embedder": backend.model_ids["embedder"],
        "normalization": "imagenet",
        "embed_size": EMBED_SIZE,
    }
    os.makedirs(os.path.dirname(os.path.abspath(job.features_out)), exist_ok=True)
    save_feature_store(job.features_out, entries, np.stack(rows), header_extra=header)
    log.info("%s: %d vectors", job.features_out, len(rows))
    return job.features_out


def run_job(job: AdapterJob) -> dict:
    """Detection followed by feature extraction with one backend instance."""
    backend = make_backend(job)
    detections = run_two_stage_detection(job, backend)
    features = extract_roi_features(job, backend)
    return {"detections": detections, "features": features}
