"""Trajectory handling and ground-truth hand-distance labels.

A trial's motion data is a set of named 3-D landmark trajectories sampled
on a common clock (meters, z up, z = 0 at the floor).  This module parses
and writes the trajectory CSV format, applies the standard zero-phase
low-pass filter, resamples to the video rate, and produces per-video-frame
labels of the two lifting-equation distances:

- H: horizontal distance in the floor plane from the midpoint of the two
  inner malleoli to the midpoint of the two hand tips, in mm.
- V: mean height of the two hand tips above the floor, in mm.
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import (
    ConfigError,
    EmptyOverlap,
    LengthMismatch,
    MissingLandmark,
    NonFiniteInput,
    NonMonotonicTime,
    NyquistViolation,
    SchemaViolation,
    TooShort,
)

AXES = ("x", "y", "z")
REQUIRED_LANDMARKS = (
    "left_hand_tip",
    "right_hand_tip",
    "left_malleolus",
    "right_malleolus",
)

LOWPASS_CUTOFF_HZ = 6.0
LOWPASS_ORDER = 4
VIDEO_RATE_HZ = 30.0

LIFT_ORIGINS = ("floor", "knee")
HAND_CONFIGS = ("broad", "narrow")
BOX_MASSES_KG = (6.0, 9.0, 12.0)
VIEW_IDS = ("V1", "V2", "V3")


@dataclass
class JointTrajectory:
    """Named landmark positions on a shared, strictly increasing clock."""

    trial_id: str
    sample_rate_hz: float
    timestamps: np.ndarray
    joints: dict

    def validate(self) -> None:
        if self.sample_rate_hz <= 0:
            raise SchemaViolation(f"{self.trial_id}: non-positive sample rate")
        t = np.asarray(self.timestamps, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise SchemaViolation(f"{self.trial_id}: empty timestamp vector")
        if not np.all(np.isfinite(t)):
            raise NonFiniteInput(f"{self.trial_id}: non-finite timestamps")
        if np.any(np.diff(t) <= 0):
            raise NonMonotonicTime(
                f"{self.trial_id}: timestamps not strictly increasing"
            )
        for name in REQUIRED_LANDMARKS:
            if name not in self.joints:
                raise MissingLandmark(f"{self.trial_id}: missing {name}")
        for name, arr in self.joints.items():
            a = np.asarray(arr)
            if a.shape != (t.size, 3):
                raise LengthMismatch(
                    f"{self.trial_id}: {name} has shape {a.shape}, "
                    f"expected ({t.size}, 3)"
                )

    def frame_joints(self, index: int) -> dict:
        """All landmark positions at one sample index."""
        return {name: arr[index] for name, arr in self.joints.items()}


@dataclass
class LiftTrialMeta:
    """Experimental condition and event annotations for one lifting trial."""

    participant_id: str
    trial_id: str
    lift_origin: str
    hand_config: str
    box_mass_kg: float
    lift_start_frame: int
    lift_end_frame: int
    frame_count: int
    fps: float = VIDEO_RATE_HZ
    available_views: tuple = VIEW_IDS

    def validate(self) -> None:
        if self.lift_origin not in LIFT_ORIGINS:
            raise SchemaViolation(f"{self.trial_id}: bad origin {self.lift_origin}")
        if self.hand_config not in HAND_CONFIGS:
            raise SchemaViolation(f"{self.trial_id}: bad hand config {self.hand_config}")
        if float(self.box_mass_kg) not in BOX_MASSES_KG:
            raise SchemaViolation(f"{self.trial_id}: bad mass {self.box_mass_kg}")
        if self.fps <= 0:
            raise SchemaViolation(f"{self.trial_id}: non-positive fps")
        if self.frame_count <= 0:
            raise SchemaViolation(f"{self.trial_id}: non-positive frame count")
        if not 0 <= self.lift_start_frame < self.lift_end_frame < self.frame_count:
            raise SchemaViolation(
                f"{self.trial_id}: lift events out of order or out of range"
            )
        unknown = set(self.available_views) - set(VIEW_IDS)
        if unknown or not self.available_views:
            raise SchemaViolation(f"{self.trial_id}: bad view set {self.available_views}")


@dataclass
class FrameLabel:
    """Ground-truth distances for one video frame."""

    frame_index: int
    h_mm: float
    v_mm: float


# -- trajectory CSV ------------------------------------------------------

def parse_joint_trajectories(path, trial_id: str = "") -> JointTrajectory:
    """Read a trajectory CSV.

    Layout: a first comment line ``# rate_hz=<value>``, a header row of
    ``t`` followed by ``<landmark>.x,<landmark>.y,<landmark>.z`` triplets,
    then one numeric row per sample.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if len(lines) < 3:
        raise SchemaViolation(f"{path}: too few lines for a trajectory file")
    if not lines[0].startswith("# rate_hz="):
        raise SchemaViolation(f"{path}: first line must be '# rate_hz=<value>'")
    try:
        rate = float(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise SchemaViolation(f"{path}: unreadable sample rate") from exc

    header = lines[1].split(",")
    if header[0] != "t":
        raise SchemaViolation(f"{path}: header must start with 't'")
    coord_cols = header[1:]
    if len(coord_cols) % 3 != 0:
        raise SchemaViolation(f"{path}: coordinate columns not in x/y/z triplets")
    names = []
    for i in range(0, len(coord_cols), 3):
        triplet = coord_cols[i : i + 3]
        stems = [c.rsplit(".", 1) for c in triplet]
        if any(len(s) != 2 for s in stems):
            raise SchemaViolation(f"{path}: column {triplet} lacks an axis suffix")
        stem = stems[0][0]
        if [s[0] for s in stems] != [stem] * 3 or [s[1] for s in stems] != list(AXES):
            raise SchemaViolation(f"{path}: columns for {stem} are not {stem}.x/.y/.z")
        names.append(stem)
    if len(set(names)) != len(names):
        raise SchemaViolation(f"{path}: duplicate landmark columns")

    ncol = len(header)
    rows = []
    for lineno, ln in enumerate(lines[2:], start=3):
        parts = ln.split(",")
        if len(parts) != ncol:
            raise LengthMismatch(f"{path}:{lineno}: expected {ncol} fields")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise SchemaViolation(f"{path}:{lineno}: non-numeric field") from exc

    data = np.asarray(rows, dtype=np.float64)
    joints = {
        name: data[:, 1 + 3 * i : 4 + 3 * i] for i, name in enumerate(names)
    }
    traj = JointTrajectory(
        trial_id=trial_id or str(path),
        sample_rate_hz=rate,
        timestamps=data[:, 0],
        joints=joints,
    )
    traj.validate()
    return traj


def save_joint_trajectories(path, traj: JointTrajectory) -> None:
    """Write a trajectory CSV; numbers use repr so reruns are byte-stable."""
    traj.validate()
    names = sorted(traj.joints)
    header = ["t"] + [f"{n}.{a}" for n in names for a in AXES]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# rate_hz={repr(float(traj.sample_rate_hz))}\n")
        fh.write(",".join(header) + "\n")
        cols = [np.asarray(traj.timestamps, dtype=np.float64)]
        for n in names:
            arr = np.asarray(traj.joints[n], dtype=np.float64)
            cols.extend(arr[:, k] for k in range(3))
        for i in range(cols[0].size):
            fh.write(",".join(repr(float(c[i])) for c in cols) + "\n")


# -- filtering and resampling --------------------------------------------

def lowpass_filter(
    traj: JointTrajectory,
    cutoff_hz: float = LOWPASS_CUTOFF_HZ,
    order: int = LOWPASS_ORDER,
) -> JointTrajectory:
    """Zero-phase Butterworth low-pass over every landmark channel.

    The filter runs forward and backward (no phase lag, squared magnitude
    response) with odd-reflection padding of 3 * (order + 1) samples.
    """
    traj.validate()
    if cutoff_hz <= 0 or order < 1:
        raise ConfigError("cutoff and order must be positive")
    nyquist = traj.sample_rate_hz / 2.0
    if cutoff_hz >= nyquist:
        raise NyquistViolation(
            f"cutoff {cutoff_hz} Hz >= Nyquist {nyquist} Hz"
        )
    padlen = 3 * (order + 1)
    n = traj.timestamps.size
    if n <= padlen:
        raise TooShort(f"need more than {padlen} samples, got {n}")
    b, a = butter(order, cutoff_hz / nyquist, btype="low")
    joints = {}
    for name, arr in traj.joints.items():
        a64 = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(a64)):
            raise NonFiniteInput(f"{traj.trial_id}: {name} has non-finite samples")
        joints[name] = filtfilt(b, a, a64, axis=0, padtype="odd", padlen=padlen)
    return JointTrajectory(
        trial_id=traj.trial_id,
        sample_rate_hz=traj.sample_rate_hz,
        timestamps=np.array(traj.timestamps, dtype=np.float64),
        joints=joints,
    )


def resample(traj: JointTrajectory, target_hz: float = VIDEO_RATE_HZ) -> JointTrajectory:
    """Resample to target_hz: decimate on integer ratios, else interpolate.

    Decimation keeps original samples exactly.  Otherwise samples are
    linearly interpolated on a uniform grid from the first timestamp.
    """
    traj.validate()
    if target_hz <= 0:
        raise ConfigError("target rate must be positive")
    if target_hz > traj.sample_rate_hz + 1e-9:
        raise ConfigError(
            f"cannot resample {traj.sample_rate_hz} Hz up to {target_hz} Hz"
        )
    ratio = traj.sample_rate_hz / target_hz
    t = np.asarray(traj.timestamps, dtype=np.float64)
    if abs(ratio - round(ratio)) < 1e-9:
        step = int(round(ratio))
        new_t = t[::step]
        joints = {n: np.array(a[::step]) for n, a in traj.joints.items()}
    else:
        duration = t[-1] - t[0]
        count = int(math.floor(duration * target_hz)) + 1
        new_t = t[0] + np.arange(count, dtype=np.float64) / target_hz
        joints = {}
        for n, a in traj.joints.items():
            a64 = np.asarray(a, dtype=np.float64)
            joints[n] = np.stack(
                [np.interp(new_t, t, a64[:, k]) for k in range(3)], axis=1
            )
    return JointTrajectory(
        trial_id=traj.trial_id,
        sample_rate_hz=float(target_hz),
        timestamps=new_t,
        joints=joints,
    )


# -- lifting-equation geometry -------------------------------------------

def _midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64)) / 2.0


def compute_h(frame_joints: dict) -> float:
    """Horizontal distance (mm) from ankle midpoint to hand midpoint.

    Uses only the floor-plane (x, y) components.
    """
    for name in REQUIRED_LANDMARKS:
        if name not in frame_joints:
            raise MissingLandmark(f"missing {name}")
        if not np.all(np.isfinite(np.asarray(frame_joints[name], dtype=np.float64))):
            raise NonFiniteInput(f"non-finite position for {name}")
    hands = _midpoint(frame_joints["left_hand_tip"], frame_joints["right_hand_tip"])
    ankles = _midpoint(frame_joints["left_malleolus"], frame_joints["right_malleolus"])
    return float(math.hypot(hands[0] - ankles[0], hands[1] - ankles[1]) * 1000.0)


def compute_v(frame_joints: dict) -> float:
    """Mean hand-tip height above the floor (mm)."""
    for name in ("left_hand_tip", "right_hand_tip"):
        if name not in frame_joints:
            raise MissingLandmark(f"missing {name}")
        if not np.all(np.isfinite(np.asarray(frame_joints[name], dtype=np.float64))):
            raise NonFiniteInput(f"non-finite position for {name}")
    z = (
        float(frame_joints["left_hand_tip"][2])
        + float(frame_joints["right_hand_tip"][2])
    ) / 2.0
    return z * 1000.0


def label_frames(
    traj: JointTrajectory, meta: LiftTrialMeta, frame_count: int | None = None
) -> list:
    """Per-video-frame H/V labels from the nearest trajectory sample.

    Frame k nominally occurs at k / fps on the shared clock.  A frame is
    labeled from its nearest sample when the time offset is at most half
    a frame period; frames with no such sample are omitted.
    """
    traj.validate()
    meta.validate()
    count = meta.frame_count if frame_count is None else int(frame_count)
    if count <= 0:
        raise ConfigError("frame count must be positive")
    t = np.asarray(traj.timestamps, dtype=np.float64)
    frame_times = np.arange(count, dtype=np.float64) / meta.fps
    right = np.searchsorted(t, frame_times)
    half_period = 0.5 / meta.fps + 1e-9

    labels = []
    for k in range(count):
        candidates = []
        if right[k] < t.size:
            candidates.append(right[k])
        if right[k] > 0:
            candidates.append(right[k] - 1)
        best = min(candidates, key=lambda i: abs(t[i] - frame_times[k]))
        if abs(t[best] - frame_times[k]) > half_period:
            continue
        joints = traj.frame_joints(best)
        labels.append(
            FrameLabel(
                frame_index=k,
                h_mm=compute_h(joints),
                v_mm=compute_v(joints),
            )
        )
    if not labels:
        raise EmptyOverlap(f"{meta.trial_id}: no frame overlaps the trajectory")
    return labels


def dense_frame_targets(labels: list, frame_count: int) -> tuple:
    """Spread sparse FrameLabels into (frame_count, 2) H/V arrays plus flags."""
    if frame_count <= 0:
        raise ConfigError("frame count must be positive")
    targets = np.zeros((frame_count, 2), dtype=np.float64)
    valid = np.zeros(frame_count, dtype=bool)
    for lab in labels:
        if not 0 <= lab.frame_index < frame_count:
            raise LengthMismatch(
                f"label frame {lab.frame_index} outside trial of {frame_count}"
            )
        targets[lab.frame_index] = (lab.h_mm, lab.v_mm)
        valid[lab.frame_index] = True
    return targets, valid


# -- label CSV ------------------------------------------------------------

def save_frame_labels(path, labels: list, header: dict) -> None:
    """Write labels as CSV with one canonical-JSON provenance comment."""
    meta = dict(header)
    meta.setdefault("kind", "frame_labels")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + canonical_json(meta) + "\n")
        fh.write("frame_index,h_mm,v_mm\n")
        for lab in labels:
            fh.write(
                f"{lab.frame_index},{repr(float(lab.h_mm))},{repr(float(lab.v_mm))}\n"
            )


def load_frame_labels(path) -> tuple:
    """Read a label CSV, returning (header dict, list of FrameLabel)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 2 or not lines[0].startswith("# "):
        raise SchemaViolation(f"{path}: missing provenance comment")
    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: unreadable provenance comment") from exc
    if lines[1] != "frame_index,h_mm,v_mm":
        raise SchemaViolation(f"{path}: unexpected column header")
    labels = []
    for lineno, ln in enumerate(lines[2:], start=3):
        parts = ln.split(",")
        if len(parts) != 3:
            raise LengthMismatch(f"{path}:{lineno}: expected 3 fields")
        labels.append(
            FrameLabel(
                frame_index=int(parts[0]),
                h_mm=float(parts[1]),
                v_mm=float(parts[2]),
            )
        )
    return header, labels


# -- trial manifest --------------------------------------------------------

def canonical_json(obj) -> str:
    """One canonical serialization so digests and reruns are byte-stable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def canonical_digest(obj) -> str:
    """Short hex digest of the canonical JSON form, for artifact headers."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


@dataclass
class TrialEntry:
    """Manifest row: a trial's condition metadata plus its file map."""

    meta: LiftTrialMeta
    files: dict = field(default_factory=dict)


def save_manifest(path, header: dict, entries: list) -> None:
    meta_fields = [f.name for f in dataclasses.fields(LiftTrialMeta)]
    doc = dict(header)
    doc.setdefault("kind", "trial_manifest")
    doc.setdefault("version", 1)
    trials = []
    for entry in entries:
        entry.meta.validate()
        row = {name: getattr(entry.meta, name) for name in meta_fields}
        row["available_views"] = list(entry.meta.available_views)
        row["files"] = entry.files
        trials.append(row)
    doc["trials"] = trials
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=True))
        fh.write("\n")


def load_manifest(path) -> tuple:
    """Read a manifest, returning (header dict, list of TrialEntry)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{path}: not valid JSON") from exc
    if not isinstance(doc, dict) or doc.get("kind") != "trial_manifest":
        raise SchemaViolation(f"{path}: not a trial manifest")
    trials = doc.get("trials")
    if not isinstance(trials, list):
        raise SchemaViolation(f"{path}: missing trial list")
    meta_fields = {f.name for f in dataclasses.fields(LiftTrialMeta)}
    entries = []
    for row in trials:
        if not isinstance(row, dict):
            raise SchemaViolation(f"{path}: trial row is not an object")
        files = row.get("files", {})
        kwargs = {k: v for k, v in row.items() if k in meta_fields}
        missing = meta_fields - set(kwargs)
        if missing:
            raise SchemaViolation(f"{path}: trial row missing {sorted(missing)}")
        kwargs["available_views"] = tuple(kwargs["available_views"])
        meta = LiftTrialMeta(**kwargs)
        meta.validate()
        entries.append(TrialEntry(meta=meta, files=files))
    header = {k: v for k, v in doc.items() if k != "trials"}
    return header, entries
