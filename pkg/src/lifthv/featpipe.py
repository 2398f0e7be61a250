"""Per-frame feature assembly, multi-view fusion, and sequence windowing.

Each video frame of each view is summarized by a 773-dimensional vector:
the mean of the frame's 768-dimensional ROI embeddings plus five
geometric features (handled-object box width and height normalized by
the image size, and the three known physical box dimensions in meters).
Frames with no usable ROI are zero vectors flagged invalid.

Per-view vectors are fused by averaging the embedding part over valid
views and copying the geometric part from the view with the most
confident handled-object detection.

Fused sequences are cut into fixed windows of 100 frames with stride 50
for training; evaluation uses one window per lift event positioned so
the event sits 50 frames in (earlier for events near the trial start).
Targets are H/V in mm scaled by 1/2000 for training.
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    FrameIndexMismatch,
    LengthMismatch,
    MissingArtifact,
    MissingViewData,
    SchemaViolation,
)
from .kinlab import (
    LiftTrialMeta,
    dense_frame_targets,
    load_frame_labels,
    load_manifest,
)
from .roistore import (
    DetectionFile,
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    VARIANTS,
    handled_object_roi,
    load_detection_records,
    resolve_frame_rois,
)

ROI_DIM = 768
GEOM_DIM = 5
FRAME_DIM = ROI_DIM + GEOM_DIM
WINDOW_LEN = 100
WINDOW_STRIDE = 50
TARGET_SCALE_MM = 2000.0
BOX_DIMS_M = (0.26, 0.41, 0.235)

STORE_MAGIC = b"LFT1"
STORE_VERSION = 1


def normalize_targets(targets_mm):
    """Scale mm targets into the unit range used for training."""
    return np.asarray(targets_mm, dtype=np.float64) / TARGET_SCALE_MM


def denormalize_targets(targets_unit):
    """Invert normalize_targets back to mm."""
    return np.asarray(targets_unit, dtype=np.float64) * TARGET_SCALE_MM


def geometric_features(bbox, image_size=(IMAGE_WIDTH, IMAGE_HEIGHT), box_dims_m=BOX_DIMS_M) -> np.ndarray:
    """Five geometric features from a handled-object box."""
    x0, y0, x1, y1 = (float(v) for v in bbox)
    w, h = image_size
    if w <= 0 or h <= 0:
        raise SchemaViolation(f"bad image size {image_size}")
    if len(box_dims_m) != 3:
        raise SchemaViolation(f"box dims must have 3 entries, got {box_dims_m}")
    return np.array(
        [(x1 - x0) / w, (y1 - y0) / h, *box_dims_m], dtype=np.float64
    )


def pool_frame_features(vectors) -> tuple:
    """Mean-pool a frame's ROI embeddings.

    Returns (vector, valid); an empty collection pools to a zero vector
    flagged invalid.
    """
    rows = [np.asarray(v, dtype=np.float64) for v in vectors]
    for r in rows:
        if r.shape != (ROI_DIM,):
            raise DimMismatch(f"ROI embedding has shape {r.shape}, expected ({ROI_DIM},)")
    if not rows:
        return np.zeros(ROI_DIM, dtype=np.float64), False
    return np.mean(np.stack(rows, axis=0), axis=0), True


@dataclass
class FrameVector:
    """One frame's 773-dim feature vector for one view (or fused)."""

    frame_index: int
    values: np.ndarray
    valid: bool
    view_id: str | None = None
    geom_score: float = -np.inf


def fuse_views(frame_vectors: list) -> FrameVector:
    """Fuse per-view vectors for one frame.

    The embedding part is the mean over valid views; the geometric part
    is copied from the valid view with the highest handled-object score
    (ties keep the lexically smallest view id).  No valid view yields an
    invalid zero vector.
    """
    if not frame_vectors:
        raise FrameIndexMismatch("no per-view vectors to fuse")
    index = frame_vectors[0].frame_index
    for fv in frame_vectors:
        if fv.frame_index != index:
            raise FrameIndexMismatch(
                f"fusing frames {index} and {fv.frame_index}"
            )
        if np.asarray(fv.values).shape != (FRAME_DIM,):
            raise DimMismatch(
                f"frame vector has shape {np.asarray(fv.values).shape}, "
                f"expected ({FRAME_DIM},)"
            )
    ordered = sorted(frame_vectors, key=lambda fv: str(fv.view_id))
    valid = [fv for fv in ordered if fv.valid]
    out = np.zeros(FRAME_DIM, dtype=np.float64)
    if not valid:
        return FrameVector(frame_index=index, values=out, valid=False, view_id=None)
    out[:ROI_DIM] = np.mean(
        np.stack([np.asarray(fv.values, dtype=np.float64)[:ROI_DIM] for fv in valid]),
        axis=0,
    )
    best = max(valid, key=lambda fv: fv.geom_score)
    score = best.geom_score
    if np.isfinite(score):
        out[ROI_DIM:] = np.asarray(best.values, dtype=np.float64)[ROI_DIM:]
    else:
        score = -np.inf
    return FrameVector(
        frame_index=index, values=out, valid=True, view_id=None, geom_score=float(score)
    )


@dataclass
class ViewSequence:
    """Per-frame vectors for a whole trial in one view (or fused)."""

    values: np.ndarray  # (n, 773) float32
    valid: np.ndarray  # (n,) bool
    geom_score: np.ndarray  # (n,) float64, -inf where no handled object
    view_id: str | None = None

    def validate(self) -> None:
        n = self.values.shape[0]
        if self.values.shape != (n, FRAME_DIM):
            raise DimMismatch(f"sequence values shape {self.values.shape}")
        if self.valid.shape != (n,) or self.geom_score.shape != (n,):
            raise LengthMismatch("sequence flag arrays disagree with values")


def build_view_sequence(
    detfile: DetectionFile,
    store: "FeatureStore",
    variant: str,
    frame_count: int,
    box_dims_m=BOX_DIMS_M,
) -> ViewSequence:
    """Assemble one view's per-frame vectors from records and embeddings.

    The embedding store is produced per variant, so pooling uses every
    stored vector of a frame; validity additionally requires the variant
    to resolve at least one ROI from the records.
    """
    by_frame = detfile.records_by_frame()
    image_size = detfile.image_size
    values = np.zeros((frame_count, FRAME_DIM), dtype=np.float32)
    valid = np.zeros(frame_count, dtype=bool)
    geom_score = np.full(frame_count, -np.inf, dtype=np.float64)
    view_id = detfile.header.get("view_id")
    for f in range(frame_count):
        rois = resolve_frame_rois(by_frame.get(f, []), variant)
        pooled, has_rows = pool_frame_features(store.vectors_for_frame(f))
        if not (rois.valid and has_rows):
            continue
        values[f, :ROI_DIM] = pooled
        obj = handled_object_roi(rois.rois)
        if obj is not None:
            values[f, ROI_DIM:] = geometric_features(obj.bbox, image_size, box_dims_m)
            geom_score[f] = float(obj.score)
        valid[f] = True
    return ViewSequence(values=values, valid=valid, geom_score=geom_score, view_id=view_id)


def fuse_view_sequences(seqs: list) -> ViewSequence:
    """Vectorized fusion of whole-trial view sequences.

    Frame f of the result equals fuse_views over the per-view frame
    vectors at f.
    """
    if not seqs:
        raise FrameIndexMismatch("no view sequences to fuse")
    for s in seqs:
        s.validate()
    n = seqs[0].values.shape[0]
    if any(s.values.shape[0] != n for s in seqs):
        raise LengthMismatch("view sequences differ in length")
    ordered = sorted(seqs, key=lambda s: str(s.view_id))
    values = np.stack([s.values.astype(np.float64) for s in ordered])  # (V, n, 773)
    valid = np.stack([s.valid for s in ordered])  # (V, n)
    scores = np.stack([s.geom_score for s in ordered])  # (V, n)

    counts = valid.sum(axis=0)  # (n,)
    any_valid = counts > 0
    weights = valid.astype(np.float64)
    roi_sum = np.einsum("vn,vnd->nd", weights, values[:, :, :ROI_DIM])
    roi_mean = roi_sum / np.maximum(counts, 1)[:, None]

    masked_scores = np.where(valid, scores, -np.inf)
    best_view = np.argmax(masked_scores, axis=0)  # first max wins: smallest view id
    best_score = masked_scores[best_view, np.arange(n)]
    geom = values[best_view, np.arange(n), ROI_DIM:]
    geom = np.where(np.isfinite(best_score)[:, None], geom, 0.0)

    out = np.zeros((n, FRAME_DIM), dtype=np.float64)
    out[:, :ROI_DIM] = np.where(any_valid[:, None], roi_mean, 0.0)
    out[:, ROI_DIM:] = np.where(any_valid[:, None], geom, 0.0)
    return ViewSequence(
        values=out.astype(np.float32),
        valid=any_valid,
        geom_score=np.where(any_valid, best_score, -np.inf),
        view_id=None,
    )


# -- trial containers --------------------------------------------------------

@dataclass
class TrialData:
    """One trial ready for training: per-view sequences plus targets."""

    meta: LiftTrialMeta
    view_sequences: dict  # view_id -> ViewSequence
    targets_mm: np.ndarray  # (frame_count, 2), H then V
    target_valid: np.ndarray  # (frame_count,) bool

    def validate(self) -> None:
        self.meta.validate()
        n = self.meta.frame_count
        if self.targets_mm.shape != (n, 2) or self.target_valid.shape != (n,):
            raise LengthMismatch(f"{self.meta.trial_id}: targets do not match frame count")
        for view, seq in self.view_sequences.items():
            seq.validate()
            if seq.values.shape[0] != n:
                raise LengthMismatch(
                    f"{self.meta.trial_id}: view {view} has {seq.values.shape[0]} frames, "
                    f"trial has {n}"
                )

    def fused_sequence(self, views) -> ViewSequence:
        """Fuse the listed views; raise when one is absent."""
        missing = [v for v in views if v not in self.view_sequences]
        if missing:
            raise MissingViewData(f"{self.meta.trial_id}: no features for {missing}")
        return fuse_view_sequences([self.view_sequences[v] for v in views])


@dataclass
class TrialDataset:
    """All trials of one pipeline variant."""

    variant: str
    trials: list

    def participants(self) -> list:
        return sorted({t.meta.participant_id for t in self.trials})

    def trials_for(self, participant_ids) -> list:
        wanted = set(participant_ids)
        return [t for t in self.trials if t.meta.participant_id in wanted]

    def validate(self) -> None:
        for t in self.trials:
            t.validate()


def load_trial_dataset(manifest_path, variant: str) -> TrialDataset:
    """Assemble a TrialDataset from a trial manifest and its files."""
    if variant not in VARIANTS:
        raise SchemaViolation(f"unknown pipeline variant {variant!r}")
    _, entries = load_manifest(manifest_path)
    root = os.path.dirname(os.fspath(manifest_path))
    trials = []
    for entry in entries:
        meta = entry.meta
        try:
            labels_rel = entry.files["labels"]
        except KeyError as exc:
            raise MissingArtifact(f"{meta.trial_id}: manifest lists no label file") from exc
        _, labels = load_frame_labels(os.path.join(root, labels_rel))
        targets, valid = dense_frame_targets(labels, meta.frame_count)
        view_sequences = {}
        for view in meta.available_views:
            det_key = f"detections_{view}"
            feat_key = f"features_{view}_{variant}"
            if det_key not in entry.files or feat_key not in entry.files:
                raise MissingArtifact(
                    f"{meta.trial_id}: manifest lists no {det_key}/{feat_key}"
                )
            detfile = load_detection_records(os.path.join(root, entry.files[det_key]))
            store = load_feature_store(os.path.join(root, entry.files[feat_key]))
            view_sequences[view] = build_view_sequence(
                detfile, store, variant, meta.frame_count
            )
        trials.append(
            TrialData(
                meta=meta,
                view_sequences=view_sequences,
                targets_mm=targets,
                target_valid=valid,
            )
        )
    dataset = TrialDataset(variant=variant, trials=trials)
    dataset.validate()
    return dataset


# -- windowing --------------------------------------------------------------

@dataclass
class WindowBatch:
    """Fixed-length windows ready for the sequence model.

    ``mask`` marks positions that are inside the trial, have valid
    features, and (for training batches) a target; masked-out positions
    contribute neither attention nor loss.  ``frame_index`` is -1 at
    padded positions.
    """

    x: np.ndarray  # (B, W, 773) float32
    mask: np.ndarray  # (B, W) bool
    y: np.ndarray  # (B, W, 2) float32, unit scale
    frame_index: np.ndarray  # (B, W) int32

    def validate(self) -> None:
        b, w, d = self.x.shape
        if d != FRAME_DIM:
            raise DimMismatch(f"window feature dim {d}")
        if self.mask.shape != (b, w) or self.frame_index.shape != (b, w):
            raise LengthMismatch("window arrays disagree")
        if self.y.shape != (b, w, 2):
            raise LengthMismatch("window targets disagree")


def window_starts(frame_count: int, window: int = WINDOW_LEN, stride: int = WINDOW_STRIDE) -> list:
    """Training window start frames for a trial of the given length.

    Full windows start every ``stride`` frames; when they do not reach
    the end of the trial one final padded window starts one stride after
    the last full window (at 0 for trials shorter than a window).
    """
    if frame_count <= 0:
        raise LengthMismatch("frame count must be positive")
    starts = list(range(0, frame_count - window + 1, stride))
    covered = starts[-1] + window if starts else 0
    if covered < frame_count:
        starts.append(starts[-1] + stride if starts else 0)
    return starts


def make_windows(
    seq: ViewSequence,
    targets_mm: np.ndarray,
    target_valid: np.ndarray,
    window: int = WINDOW_LEN,
    stride: int = WINDOW_STRIDE,
) -> WindowBatch:
    """Cut a fused trial sequence into training windows."""
    seq.validate()
    n = seq.values.shape[0]
    targets_mm = np.asarray(targets_mm, dtype=np.float64)
    target_valid = np.asarray(target_valid, dtype=bool)
    if targets_mm.shape != (n, 2) or target_valid.shape != (n,):
        raise LengthMismatch("targets do not match sequence length")
    starts = window_starts(n, window, stride)
    b = len(starts)
    x = np.zeros((b, window, FRAME_DIM), dtype=np.float32)
    mask = np.zeros((b, window), dtype=bool)
    y = np.zeros((b, window, 2), dtype=np.float32)
    frame_index = np.full((b, window), -1, dtype=np.int32)
    unit = normalize_targets(targets_mm)
    for i, s in enumerate(starts):
        stop = min(s + window, n)
        k = stop - s
        x[i, :k] = seq.values[s:stop]
        mask[i, :k] = seq.valid[s:stop] & target_valid[s:stop]
        y[i, :k] = unit[s:stop]
        frame_index[i, :k] = np.arange(s, stop, dtype=np.int32)
    y[~mask] = 0.0
    batch = WindowBatch(x=x, mask=mask, y=y, frame_index=frame_index)
    batch.validate()
    return batch


def concat_window_batches(batches: list) -> WindowBatch:
    """Stack window batches from many trials into one."""
    if not batches:
        raise LengthMismatch("no window batches to concatenate")
    return WindowBatch(
        x=np.concatenate([b.x for b in batches], axis=0),
        mask=np.concatenate([b.mask for b in batches], axis=0),
        y=np.concatenate([b.y for b in batches], axis=0),
        frame_index=np.concatenate([b.frame_index for b in batches], axis=0),
    )


@dataclass
class EventWindow:
    """One evaluation window centered on a lift event.

    The event frame sits ``event_offset`` positions into the window
    (50 when the trial allows, less near the trial start).
    """

    phase: str  # "start" or "end"
    x: np.ndarray  # (W, 773) float32
    mask: np.ndarray  # (W,) bool
    target_mm: np.ndarray  # (2,)
    event_offset: int
    frame_start: int


def extract_eval_sequences(
    seq: ViewSequence,
    targets_mm: np.ndarray,
    target_valid: np.ndarray,
    lift_start_frame: int,
    lift_end_frame: int,
    window: int = WINDOW_LEN,
) -> list:
    """One window per lift event, event placed mid-window when possible."""
    seq.validate()
    n = seq.values.shape[0]
    targets_mm = np.asarray(targets_mm, dtype=np.float64)
    target_valid = np.asarray(target_valid, dtype=bool)
    if targets_mm.shape != (n, 2) or target_valid.shape != (n,):
        raise LengthMismatch("targets do not match sequence length")
    out = []
    for phase, event in (("start", lift_start_frame), ("end", lift_end_frame)):
        if not 0 <= event < n:
            raise LengthMismatch(f"{phase} event frame {event} outside trial of {n}")
        if not target_valid[event]:
            raise LengthMismatch(f"{phase} event frame {event} has no label")
        s = max(0, event - window // 2)
        stop = min(s + window, n)
        k = stop - s
        x = np.zeros((window, FRAME_DIM), dtype=np.float32)
        mask = np.zeros(window, dtype=bool)
        x[:k] = seq.values[s:stop]
        mask[:k] = seq.valid[s:stop]
        out.append(
            EventWindow(
                phase=phase,
                x=x,
                mask=mask,
                target_mm=targets_mm[event].copy(),
                event_offset=event - s,
                frame_start=s,
            )
        )
    return out


# -- embedding store ----------------------------------------------------------

@dataclass
class FeatureStore:
    """ROI embeddings for one trial and view, in frame order.

    ``entries`` lists (frame_index, roi_label) per stored row; ``data``
    is the matching (N, dim) float32 matrix.
    """

    header: dict
    entries: list
    data: np.ndarray

    def __post_init__(self):
        self._by_frame = None

    def vectors_for_frame(self, frame_index: int) -> np.ndarray:
        if self._by_frame is None:
            index: dict = {}
            for row, (f, _label) in enumerate(self.entries):
                index.setdefault(f, []).append(row)
            self._by_frame = index
        rows = self._by_frame.get(frame_index)
        if not rows:
            return self.data[0:0]
        return self.data[rows]


def save_feature_store(path, entries: list, data: np.ndarray, header_extra: dict | None = None) -> None:
    """Write an embedding store.

    Layout: magic ``LFT1``, little-endian u16 version and u32 header
    length, a canonical JSON header, then the raw little-endian float32
    matrix.  Identical inputs produce identical bytes.
    """
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise DimMismatch(f"store data must be 2-D, got shape {data.shape}")
    if len(entries) != data.shape[0]:
        raise LengthMismatch(
            f"{len(entries)} entries but {data.shape[0]} data rows"
        )
    header = dict(header_extra or {})
    header["kind"] = "roi_features"
    header["dim"] = int(data.shape[1])
    header["count"] = int(data.shape[0])
    header["entries"] = [[int(f), str(label)] for f, label in entries]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<H", STORE_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes(order="C"))


def load_feature_store(path) -> FeatureStore:
    """Read and validate an embedding store."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != STORE_MAGIC:
        raise SchemaViolation(f"{path}: not an embedding store")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != STORE_VERSION:
        raise SchemaViolation(f"{path}: unsupported store version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 6)
    if len(raw) < 10 + hlen:
        raise SchemaViolation(f"{path}: truncated header")
    try:
        header = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"{path}: unreadable store header") from exc
    if header.get("kind") != "roi_features":
        raise SchemaViolation(f"{path}: wrong store kind {header.get('kind')!r}")
    dim = int(header["dim"])
    count = int(header["count"])
    entries = [(int(f), str(label)) for f, label in header["entries"]]
    if len(entries) != count:
        raise LengthMismatch(f"{path}: {len(entries)} entries, header says {count}")
    body = raw[10 + hlen :]
    expected = count * dim * 4
    if len(body) != expected:
        raise LengthMismatch(
            f"{path}: {len(body)} data bytes, expected {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(count, dim).copy()
    return FeatureStore(header=header, entries=entries, data=data)
