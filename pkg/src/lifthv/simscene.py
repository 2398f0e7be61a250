"""Synthetic multi-view lifting trials with detections and ROI features.

Stands in for the capture hardware and the vision models so the whole
pipeline can be trained and verified end to end.  A trial is a
minimum-jerk vertical hand trajectory between seeded per-participant
postures, with an anterior reach profile whose endpoints vary widely
from trial to trial (foot placement is uncontrolled) and fixed
ankles; three pinhole cameras (one frontal, two oblique) observe the
scene.  Per
frame and view the renderer emits the same two-stage detection records
a text-guided detector would produce: a person box bounding the
projected landmarks, task-region boxes (hands, wrists, shoes, handled
box) with pixel noise inside the person crop, box-local rectangular
masks, and per-label occlusion dropout that rises for low-lying hands,
wrists, and the handled box in every view, the way the box and the
stooping lifter's own body screen the grasp near the floor.  The
dropout draws are independent across views, so a region lost to one
camera usually survives in another.

ROI feature vectors are a fixed seeded random linear map of a
box-geometry descriptor plus Gaussian noise.  Mask-bearing records are
encoded from the noiseless mask rectangle with a lower noise level, so
the segmentation-style variant carries strictly more signal than the
detection-only variant and learnability orderings can be tested.

Everything is a pure function of (config, identifiers, seed): the same
inputs reproduce identical trajectories, record streams, and feature
bytes.
"""

import dataclasses
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._rng import derive_rng, derive_seed_sequence
from .errors import BehindCamera, ConfigError, SchemaViolation
from .featpipe import (
    BOX_DIMS_M,
    ROI_DIM,
    FeatureStore,
    TrialData,
    TrialDataset,
    build_view_sequence,
    save_feature_store,
)
from .kinlab import (
    BOX_MASSES_KG,
    HAND_CONFIGS,
    LIFT_ORIGINS,
    VIEW_IDS,
    JointTrajectory,
    LiftTrialMeta,
    TrialEntry,
    canonical_digest,
    dense_frame_targets,
    label_frames,
    lowpass_filter,
    resample,
    save_frame_labels,
    save_joint_trajectories,
    save_manifest,
)
from .roistore import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    STAGE2_LABELS,
    VARIANT_MASK,
    VARIANTS,
    DetectionFile,
    DetectionRecord,
    MaskRLE,
    crop_rect,
    save_detection_records,
)

PERSON_LABEL = "person lifting"
# shared label blocks + view one-hot + view-tagged label blocks
DESCRIPTOR_DIM = 5 * len(STAGE2_LABELS) * (1 + len(VIEW_IDS)) + len(VIEW_IDS)

# per-label detection score distribution: mean, sd, clip low, clip high.
# The real lifter and the handled box never score below any decoy's cap.
_SCORES = {
    PERSON_LABEL: (0.92, 0.03, 0.70, 0.999),
    "hand": (0.80, 0.04, 0.05, 0.999),
    "wrist": (0.72, 0.04, 0.05, 0.999),
    "shoe": (0.78, 0.04, 0.05, 0.999),
    "wooden box": (0.86, 0.03, 0.70, 0.999),
    "crate": (0.40, 0.05, 0.05, 0.60),
}
_DECOY_PERSON_SCORE = (0.30, 0.05, 0.05, 0.60)


# -- cameras ------------------------------------------------------------------

@dataclass
class CameraModel:
    """Pinhole camera; world to camera is x_c = R x_w + t, z_c forward."""

    view_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world->camera
    translation: np.ndarray  # (3,) meters
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"{self.view_id}: focal lengths must be positive")
        if not (0 <= self.cx < self.image_width and 0 <= self.cy < self.image_height):
            raise ConfigError(f"{self.view_id}: principal point outside the image")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ConfigError(f"{self.view_id}: rotation is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise ConfigError(f"{self.view_id}: rotation is left-handed")
        if np.asarray(self.translation, dtype=np.float64).shape != (3,):
            raise ConfigError(f"{self.view_id}: translation must have 3 entries")


def project_to_view(point, cam: CameraModel) -> tuple:
    """Project a world point to pixel coordinates (u, v)."""
    p = np.asarray(point, dtype=np.float64)
    pc = np.asarray(cam.rotation, dtype=np.float64) @ p + np.asarray(
        cam.translation, dtype=np.float64
    )
    if pc[2] <= 0.0:
        raise BehindCamera(f"{cam.view_id}: camera-frame depth {pc[2]:.4f} m")
    return (cam.cx + cam.fx * pc[0] / pc[2], cam.cy + cam.fy * pc[1] / pc[2])


def look_at_camera(view_id: str, position, target, fx: float, fy: float,
                   cx: float, cy: float) -> CameraModel:
    """Camera at ``position`` looking at ``target`` with the world +z kept up.

    Camera axes: x right, y down (image v grows downward), z forward.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise ConfigError(f"{view_id}: camera position equals its target")
    forward = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise ConfigError(f"{view_id}: camera looks straight along the up axis")
    right = right / rnorm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    cam = CameraModel(
        view_id=view_id,
        fx=float(fx),
        fy=float(fy),
        cx=float(cx),
        cy=float(cy),
        rotation=rotation,
        translation=-rotation @ position,
    )
    cam.validate()
    return cam


# -- scene configuration ------------------------------------------------------

@dataclass
class SyntheticSceneConfig:
    """Scene layout, trajectory statistics, and corruption levels.

    ``seed`` is the master seed: anthropometry, trial seeds, and the
    feature map all derive from it.
    """

    participant_count: int = 8
    trials_per_participant: int = 24
    trial_frames: int = 80
    fps: float = 30.0
    mocap_rate_hz: float = 100.0
    seed: int = 0

    # anthropometry and task geometry, meters
    hip_height_mean: float = 0.95
    hip_height_sd: float = 0.05
    knee_height_mean: float = 0.50
    knee_height_sd: float = 0.03
    stature_mean: float = 1.70
    stature_sd: float = 0.06
    ankle_height_m: float = 0.08
    ankle_spacing_m: float = 0.20
    hand_spacing_broad_m: float = 0.52
    hand_spacing_narrow_m: float = 0.33
    reach_start_mean: float = 0.45
    reach_start_sd: float = 0.12
    reach_end_mean: float = 0.32
    reach_end_sd: float = 0.08
    lift_start_frame: int = 15
    lift_end_frame: int = 60
    event_jitter_frames: int = 3
    box_dims_m: tuple = BOX_DIMS_M

    # camera ring
    camera_distance_m: float = 2.2
    camera_height_m: float = 0.7
    oblique_azimuth_deg: float = 40.0
    focal_px: float = 900.0

    # corruption
    bbox_noise_px: float = 5.0
    person_margin_px: float = 25.0
    feature_noise_detect: float = 0.35
    feature_noise_segment: float = 0.15
    occlusion_base: float = 0.03
    occlusion_low_hand: float = 0.20
    occlusion_low_v_m: float = 0.45
    occlusion_overrides: dict = field(default_factory=dict)
    decoy_rate: float = 0.10

    def validate(self) -> None:
        if self.participant_count < 1 or self.trials_per_participant < 1:
            raise ConfigError("participant and trial counts must be at least 1")
        if self.trial_frames < 2 or self.fps <= 0 or self.mocap_rate_hz < self.fps:
            raise ConfigError("need trial_frames >= 2 and mocap rate >= video rate")
        j = self.event_jitter_frames
        if j < 0 or self.lift_start_frame - j < 0:
            raise ConfigError("event jitter pushes the lift start before frame 0")
        if self.lift_start_frame + j >= self.lift_end_frame - j:
            raise ConfigError("lift start and end windows overlap")
        if self.lift_end_frame + j >= self.trial_frames:
            raise ConfigError("event jitter pushes the lift end past the trial")
        sds = (
            self.hip_height_sd, self.knee_height_sd, self.stature_sd,
            self.reach_start_sd, self.reach_end_sd,
        )
        if any(sd < 0 for sd in sds):
            raise ConfigError("anthropometry and reach SDs must be non-negative")
        if len(self.box_dims_m) != 3 or any(d <= 0 for d in self.box_dims_m):
            raise ConfigError(f"bad box dimensions {self.box_dims_m}")
        if self.camera_distance_m <= 0 or self.focal_px <= 0:
            raise ConfigError("camera distance and focal length must be positive")
        if self.bbox_noise_px < 0 or self.person_margin_px < 0:
            raise ConfigError("pixel noise and margins must be non-negative")
        if self.feature_noise_detect < 0 or self.feature_noise_segment < 0:
            raise ConfigError("feature noise levels must be non-negative")
        probs = [self.occlusion_base, self.occlusion_low_hand, self.decoy_rate]
        probs.extend(self.occlusion_overrides.values())
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("occlusion and decoy rates must lie in [0, 1]")
        unknown = set(self.occlusion_overrides) - set(STAGE2_LABELS)
        if unknown:
            raise ConfigError(f"occlusion overrides for unknown labels {sorted(unknown)}")


def default_cameras(cfg: SyntheticSceneConfig) -> dict:
    """Three cameras on a ring: V3 frontal, V1/V2 oblique at +/- azimuth."""
    cfg.validate()
    center = np.array([0.3, 0.0, 0.0])
    target = np.array([0.3, 0.0, 0.7])
    azimuths = {
        "V1": math.radians(cfg.oblique_azimuth_deg),
        "V2": -math.radians(cfg.oblique_azimuth_deg),
        "V3": 0.0,
    }
    cams = {}
    for view, az in azimuths.items():
        position = center + np.array(
            [
                cfg.camera_distance_m * math.cos(az),
                cfg.camera_distance_m * math.sin(az),
                cfg.camera_height_m,
            ]
        )
        cams[view] = look_at_camera(
            view, position, target,
            fx=cfg.focal_px, fy=cfg.focal_px,
            cx=IMAGE_WIDTH / 2.0, cy=IMAGE_HEIGHT / 2.0,
        )
    return cams


# -- trial synthesis ----------------------------------------------------------

_CONDITION_GRID = [
    (origin, hands, mass)
    for origin in LIFT_ORIGINS
    for hands in HAND_CONFIGS
    for mass in BOX_MASSES_KG
]


def trial_condition(trial_index: int) -> tuple:
    """(lift origin, hand configuration, box mass) for a trial index.

    Cycles the full 2 x 2 x 3 condition grid so any multiple of 12
    trials per participant is balanced.
    """
    return _CONDITION_GRID[trial_index % len(_CONDITION_GRID)]


def _min_jerk(tau: np.ndarray) -> np.ndarray:
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


def generate_trial(
    cfg: SyntheticSceneConfig,
    participant_id: str,
    trial_id: str,
    seed: int,
    condition: tuple | None = None,
) -> tuple:
    """Synthesize one trial's landmark trajectory and metadata.

    The hands rise from the origin height (floor lifts: the top of the
    box; knee lifts: the participant's knee height) to hip height along
    a minimum-jerk profile, while the anterior reach shrinks along the
    same profile.  Anthropometry is drawn per participant from the
    config master seed; per-trial variation comes from ``seed``.
    """
    cfg.validate()
    anthro = derive_rng(cfg.seed, "anthro", participant_id)
    hip = max(0.70, float(anthro.normal(cfg.hip_height_mean, cfg.hip_height_sd)))
    knee = max(0.35, float(anthro.normal(cfg.knee_height_mean, cfg.knee_height_sd)))
    stature = max(1.40, float(anthro.normal(cfg.stature_mean, cfg.stature_sd)))

    rng = derive_rng(seed, "trial")
    if condition is None:
        condition = _CONDITION_GRID[int(rng.integers(0, len(_CONDITION_GRID)))]
    origin, hand_config, mass = condition
    if origin not in LIFT_ORIGINS or hand_config not in HAND_CONFIGS:
        raise ConfigError(f"bad trial condition {condition}")
    j = cfg.event_jitter_frames
    start_f = cfg.lift_start_frame + int(rng.integers(-j, j + 1))
    end_f = cfg.lift_end_frame + int(rng.integers(-j, j + 1))
    r0 = max(0.15, float(rng.normal(cfg.reach_start_mean, cfg.reach_start_sd)))
    r1 = max(0.15, float(rng.normal(cfg.reach_end_mean, cfg.reach_end_sd)))

    z0 = cfg.box_dims_m[2] if origin == "floor" else knee
    z1 = hip
    spacing = (
        cfg.hand_spacing_broad_m if hand_config == "broad" else cfg.hand_spacing_narrow_m
    )

    count = int(round(cfg.trial_frames / cfg.fps * cfg.mocap_rate_hz)) + 1
    t = np.arange(count, dtype=np.float64) / cfg.mocap_rate_hz
    t0, t1 = start_f / cfg.fps, end_f / cfg.fps
    s = _min_jerk(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
    z = z0 + (z1 - z0) * s
    r = r0 + (r1 - r0) * s

    zeros = np.zeros(count)
    ones = np.ones(count)
    # the torso straightens as the lift completes; floor lifts stoop deeper
    drop = 0.45 if origin == "floor" else 0.20
    joints = {
        "left_hand_tip": np.stack([r, ones * (spacing / 2.0), z], axis=1),
        "right_hand_tip": np.stack([r, ones * (-spacing / 2.0), z], axis=1),
        "left_malleolus": np.stack(
            [zeros, ones * (cfg.ankle_spacing_m / 2.0), ones * cfg.ankle_height_m], axis=1
        ),
        "right_malleolus": np.stack(
            [zeros, ones * (-cfg.ankle_spacing_m / 2.0), ones * cfg.ankle_height_m], axis=1
        ),
        "head": np.stack(
            [0.25 * (1.0 - s), zeros, ones * stature - drop * (1.0 - s)], axis=1
        ),
    }
    traj = JointTrajectory(
        trial_id=trial_id,
        sample_rate_hz=cfg.mocap_rate_hz,
        timestamps=t,
        joints=joints,
    )
    meta = LiftTrialMeta(
        participant_id=participant_id,
        trial_id=trial_id,
        lift_origin=origin,
        hand_config=hand_config,
        box_mass_kg=float(mass),
        lift_start_frame=start_f,
        lift_end_frame=end_f,
        frame_count=cfg.trial_frames,
        fps=cfg.fps,
        available_views=tuple(VIEW_IDS),
    )
    traj.validate()
    meta.validate()
    return traj, meta


def build_trial_frames(traj: JointTrajectory, meta: LiftTrialMeta) -> tuple:
    """Filter, resample to the video rate, and label every frame.

    Returns (video-rate trajectory, (n, 2) H/V targets in mm, validity).
    """
    filtered = lowpass_filter(traj)
    at_fps = resample(filtered, meta.fps)
    labels = label_frames(at_fps, meta)
    targets, valid = dense_frame_targets(labels, meta.frame_count)
    return at_fps, targets, valid


# -- rendering ----------------------------------------------------------------

def _frame_regions(joints: dict, spacing: float, box_dims: tuple) -> list:
    """(label, center, half extents) of each stage-2 region for one frame."""
    lh = np.asarray(joints["left_hand_tip"], dtype=np.float64)
    rh = np.asarray(joints["right_hand_tip"], dtype=np.float64)
    la = np.asarray(joints["left_malleolus"], dtype=np.float64)
    ra = np.asarray(joints["right_malleolus"], dtype=np.float64)
    hands_mid = (lh + rh) / 2.0
    wrist_off = np.array([-0.08, 0.0, 0.03])
    shoe_off = np.array([0.06, 0.0, -0.03])
    # hands grip the top face, so the box hangs half its height below them
    box_center = hands_mid - np.array([0.0, 0.0, box_dims[2] / 2.0])
    box_half = (box_dims[1] / 2.0, box_dims[0] / 2.0, box_dims[2] / 2.0)
    return [
        ("hand", lh, (0.05, 0.05, 0.05)),
        ("hand", rh, (0.05, 0.05, 0.05)),
        ("wrist", lh + wrist_off, (0.04, 0.04, 0.04)),
        ("wrist", rh + wrist_off, (0.04, 0.04, 0.04)),
        ("shoe", la + shoe_off, (0.14, 0.06, 0.05)),
        ("shoe", ra + shoe_off, (0.14, 0.06, 0.05)),
        ("wooden box", box_center, box_half),
    ]


_DECOY_CRATE = (np.array([0.9, 0.8, 0.15]), (0.15, 0.12, 0.15))


def _project_cuboid(center, half, cam: CameraModel) -> tuple:
    """Pixel bounding box of an axis-aligned world cuboid."""
    us, vs = [], []
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                corner = (
                    center[0] + sx * half[0],
                    center[1] + sy * half[1],
                    center[2] + sz * half[2],
                )
                u, v = project_to_view(corner, cam)
                us.append(u)
                vs.append(v)
    return (min(us), min(vs), max(us), max(vs))


def _clamp_box(box, bounds, min_size: float = 2.0) -> tuple:
    """Intersect a box with bounds, keeping at least min_size per side."""
    bx0, by0, bx1, by1 = bounds
    x0 = max(box[0], bx0)
    y0 = max(box[1], by0)
    x1 = min(box[2], bx1)
    y1 = min(box[3], by1)
    if x1 - x0 < min_size:
        c = min(max((x0 + x1) / 2.0, bx0 + min_size / 2.0), bx1 - min_size / 2.0)
        x0, x1 = c - min_size / 2.0, c + min_size / 2.0
    if y1 - y0 < min_size:
        c = min(max((y0 + y1) / 2.0, by0 + min_size / 2.0), by1 - min_size / 2.0)
        y0, y1 = c - min_size / 2.0, c + min_size / 2.0
    return (x0, y0, x1, y1)


def _inner_mask(true_box, noisy_box) -> MaskRLE:
    """Box-local mask whose foreground is the noiseless rectangle."""
    gw = max(1, int(noisy_box[2] - noisy_box[0]))
    gh = max(1, int(noisy_box[3] - noisy_box[1]))
    x0 = min(max(int(math.ceil(true_box[0] - noisy_box[0])), 0), gw)
    y0 = min(max(int(math.ceil(true_box[1] - noisy_box[1])), 0), gh)
    x1 = min(max(int(math.floor(true_box[2] - noisy_box[0])), 0), gw)
    y1 = min(max(int(math.floor(true_box[3] - noisy_box[1])), 0), gh)
    grid = np.zeros((gh, gw), dtype=bool)
    if x1 > x0 and y1 > y0:
        grid[y0:y1, x0:x1] = True
    else:
        grid[:, :] = True
    return MaskRLE.encode(grid)


def _draw_score(rng, spec) -> float:
    mean, sd, lo, hi = spec
    return float(min(max(rng.normal(mean, sd), lo), hi))


def _occlusion_rate(cfg: SyntheticSceneConfig, label: str, center_z: float) -> float:
    if label in cfg.occlusion_overrides:
        return float(cfg.occlusion_overrides[label])
    p = cfg.occlusion_base
    low_labels = ("hand", "wrist", "wooden box")
    if label in low_labels and center_z < cfg.occlusion_low_v_m:
        p += cfg.occlusion_low_hand
    return min(p, 1.0)


def render_rois(
    traj: JointTrajectory,
    meta: LiftTrialMeta,
    cam: CameraModel,
    cfg: SyntheticSceneConfig,
    seed: int,
) -> list:
    """Per-frame two-stage detection records for one camera view.

    The trajectory must already be at the video rate.  Emitted records
    mirror a real detector run: one high-score person box (plus a static
    low-score decoy person), stage-2 task regions with Gaussian corner
    noise clamped to the person crop, inner-rectangle masks, Bernoulli
    occlusion dropout, and an occasional maskless decoy crate.
    """
    cfg.validate()
    cam.validate()
    if abs(traj.sample_rate_hz - meta.fps) > 1e-9:
        raise ConfigError(
            f"{meta.trial_id}: rendering needs a {meta.fps} Hz trajectory, "
            f"got {traj.sample_rate_hz} Hz"
        )
    if traj.timestamps.size < meta.frame_count:
        raise ConfigError(
            f"{meta.trial_id}: trajectory has {traj.timestamps.size} samples "
            f"for {meta.frame_count} frames"
        )
    spacing = (
        cfg.hand_spacing_broad_m
        if meta.hand_config == "broad"
        else cfg.hand_spacing_narrow_m
    )
    image = (0.0, 0.0, float(cam.image_width), float(cam.image_height))
    rng = derive_rng(seed, "render", cam.view_id)

    # a static bystander box that stage 1 must out-score
    dx0 = float(rng.uniform(10.0, 200.0))
    dy0 = float(rng.uniform(80.0, 300.0))
    decoy_person = _clamp_box(
        (dx0, dy0, dx0 + float(rng.uniform(60.0, 140.0)),
         dy0 + float(rng.uniform(150.0, 300.0))),
        image,
    )

    records = []
    for f in range(meta.frame_count):
        joints = traj.frame_joints(f)
        pts = [project_to_view(p, cam) for p in joints.values()]
        us = [p[0] for p in pts]
        vs = [p[1] for p in pts]
        m = cfg.person_margin_px
        person_box = _clamp_box(
            (min(us) - m, min(vs) - m, max(us) + m, max(vs) + m), image
        )
        records.append(
            DetectionRecord(
                frame_index=f,
                view_id=cam.view_id,
                stage=1,
                label=PERSON_LABEL,
                score=_draw_score(rng, _SCORES[PERSON_LABEL]),
                bbox=person_box,
            )
        )
        records.append(
            DetectionRecord(
                frame_index=f,
                view_id=cam.view_id,
                stage=1,
                label=PERSON_LABEL,
                score=_draw_score(rng, _DECOY_PERSON_SCORE),
                bbox=decoy_person,
            )
        )
        crop = crop_rect(person_box, image_width=cam.image_width,
                         image_height=cam.image_height)

        for label, center, half in _frame_regions(joints, spacing, cfg.box_dims_m):
            if rng.random() < _occlusion_rate(cfg, label, float(center[2])):
                continue
            true_box = _clamp_box(_project_cuboid(center, half, cam), crop)
            noisy = true_box + rng.normal(0.0, cfg.bbox_noise_px, size=4)
            noisy = _clamp_box(
                (min(noisy[0], noisy[2]), min(noisy[1], noisy[3]),
                 max(noisy[0], noisy[2]), max(noisy[1], noisy[3])),
                crop,
            )
            records.append(
                DetectionRecord(
                    frame_index=f,
                    view_id=cam.view_id,
                    stage=2,
                    label=label,
                    score=_draw_score(rng, _SCORES[label]),
                    bbox=noisy,
                    crop_rect=crop,
                    mask=_inner_mask(true_box, noisy),
                )
            )
        if rng.random() < cfg.decoy_rate:
            # background clutter; carries no mask, so the mask variant drops it
            center, half = _DECOY_CRATE
            try:
                crate_box = _clamp_box(_project_cuboid(center, half, cam), crop)
            except BehindCamera:
                crate_box = None
            if crate_box is not None:
                noisy = crate_box + rng.normal(0.0, cfg.bbox_noise_px, size=4)
                noisy = _clamp_box(
                    (min(noisy[0], noisy[2]), min(noisy[1], noisy[3]),
                     max(noisy[0], noisy[2]), max(noisy[1], noisy[3])),
                    crop,
                )
                records.append(
                    DetectionRecord(
                        frame_index=f,
                        view_id=cam.view_id,
                        stage=2,
                        label="crate",
                        score=_draw_score(rng, _SCORES["crate"]),
                        bbox=noisy,
                        crop_rect=crop,
                        mask=None,
                    )
                )
    for rec in records:
        rec.validate(cam.image_width, cam.image_height)
    return records


# -- feature encoding ---------------------------------------------------------

@lru_cache(maxsize=8)
def _feature_map(seed: int) -> np.ndarray:
    """Fixed random linear map from descriptors to the embedding space."""
    rng = derive_rng(seed, "featmap")
    return rng.normal(size=(ROI_DIM, DESCRIPTOR_DIM)) / math.sqrt(DESCRIPTOR_DIM)


def roi_descriptor(rec: DetectionRecord, variant: str,
                   image_size=(IMAGE_WIDTH, IMAGE_HEIGHT)) -> np.ndarray:
    """Label-blocked geometry descriptor of one stage-2 record.

    The mask variant reads geometry from the mask's foreground rectangle
    (better localized than the noisy box) when a mask is present.

    Geometry lands twice: in a block shared across views, where
    cross-view pooling averages same-sign signals, and in a
    view-tagged block, where pooling superposes views instead of
    mixing them.  Real crop embeddings are view-distinguishable the
    same way, through background and perspective.  The shared block
    folds the horizontal center onto one half image because the
    camera ring is mirror symmetric: without the fold, the mirrored
    oblique views contribute opposite-signed horizontal terms that
    cancel under cross-view averaging.
    """
    if rec.label not in STAGE2_LABELS:
        raise SchemaViolation(f"no descriptor block for label {rec.label!r}")
    if rec.view_id not in VIEW_IDS:
        raise SchemaViolation(f"no descriptor slot for view {rec.view_id!r}")
    box = rec.bbox
    if variant == VARIANT_MASK and rec.mask is not None:
        rect = rec.mask.foreground_rect()
        if rect is not None:
            box = (
                rec.bbox[0] + rect[0],
                rec.bbox[1] + rect[1],
                rec.bbox[0] + rect[2],
                rec.bbox[1] + rect[3],
            )
    w, h = image_size
    geom = (
        (box[0] + box[2]) / 2.0 / w,
        (box[1] + box[3]) / 2.0 / h,
        (box[2] - box[0]) / w,
        (box[3] - box[1]) / h,
        1.0,
    )
    d = np.zeros(DESCRIPTOR_DIM, dtype=np.float64)
    li = STAGE2_LABELS.index(rec.label)
    vi = VIEW_IDS.index(rec.view_id)
    # the camera ring is mirror symmetric about the sagittal plane, so the
    # view-invariant block folds x onto one half image; raw x stays in the
    # view-tagged block
    folded = (0.5 + abs(geom[0] - 0.5),) + geom[1:]
    d[5 * li : 5 * li + 5] = folded
    d[5 * len(STAGE2_LABELS) + vi] = 1.0
    base = 5 * len(STAGE2_LABELS) + len(VIEW_IDS)
    tagged = base + 5 * (vi * len(STAGE2_LABELS) + li)
    d[tagged : tagged + 5] = geom
    return d


def encode_view_features(
    records: list,
    variant: str,
    cfg: SyntheticSceneConfig,
    map_seed: int,
    noise_seed: int | None = None,
) -> tuple:
    """Encode one view's stage-2 records into (entries, (N, 768) data).

    The linear map depends only on ``map_seed`` so every trial and view
    of a dataset shares it; the additive noise stream is per view and
    variant under ``noise_seed`` (default: the map seed).
    """
    if variant not in VARIANTS:
        raise SchemaViolation(f"unknown pipeline variant {variant!r}")
    rows = [
        r for r in records
        if r.stage == 2 and not (variant == VARIANT_MASK and r.mask is None)
    ]
    entries = [(r.frame_index, r.label) for r in rows]
    if not rows:
        return entries, np.zeros((0, ROI_DIM), dtype=np.float32)
    desc = np.stack([roi_descriptor(r, variant) for r in rows])
    data = desc @ _feature_map(int(map_seed)).T
    sd = cfg.feature_noise_segment if variant == VARIANT_MASK else cfg.feature_noise_detect
    if sd > 0.0:
        base = map_seed if noise_seed is None else noise_seed
        noise_rng = derive_rng(int(base), "featnoise", rows[0].view_id, variant)
        data = data + noise_rng.normal(0.0, sd, size=data.shape)
    return entries, data.astype(np.float32)


# -- dataset assembly ---------------------------------------------------------

def trial_seed(master_seed: int, participant_id: str, trial_index: int) -> int:
    """Stable per-trial seed derived from the master seed."""
    return int(
        derive_seed_sequence(master_seed, "trial", participant_id, trial_index)
        .generate_state(1)[0]
    )


def _iter_trials(cfg: SyntheticSceneConfig):
    for p in range(cfg.participant_count):
        pid = f"P{p + 1:02d}"
        for i in range(cfg.trials_per_participant):
            tid = f"{pid}_T{i:02d}"
            seed = trial_seed(cfg.seed, pid, i)
            traj, meta = generate_trial(cfg, pid, tid, seed, trial_condition(i))
            yield pid, i, seed, traj, meta


def build_memory_dataset(cfg: SyntheticSceneConfig, variants=VARIANTS) -> dict:
    """Generate the full synthetic dataset in memory, one TrialDataset per variant.

    Detection records and raw embeddings are dropped once each view is
    reduced to its per-frame sequence, so memory stays proportional to
    frames x 773 rather than ROIs x 768.
    """
    cfg.validate()
    cams = default_cameras(cfg)
    datasets = {v: TrialDataset(variant=v, trials=[]) for v in variants}
    for pid, i, seed, traj, meta in _iter_trials(cfg):
        at_fps, targets, valid = build_trial_frames(traj, meta)
        per_variant = {v: {} for v in variants}
        for view in meta.available_views:
            records = render_rois(at_fps, meta, cams[view], cfg, seed)
            detfile = DetectionFile(
                header={"kind": "detections", "view_id": view}, records=records
            )
            for variant in variants:
                entries, data = encode_view_features(
                    records, variant, cfg, cfg.seed, seed
                )
                store = FeatureStore(header={}, entries=entries, data=data)
                per_variant[variant][view] = build_view_sequence(
                    detfile, store, variant, meta.frame_count
                )
        for variant in variants:
            datasets[variant].trials.append(
                TrialData(
                    meta=meta,
                    view_sequences=per_variant[variant],
                    targets_mm=targets,
                    target_valid=valid,
                )
            )
    for ds in datasets.values():
        ds.validate()
    return datasets


def write_synthetic_dataset(out_dir, cfg: SyntheticSceneConfig) -> str:
    """Write the dataset as the standard on-disk artifacts; returns the manifest path.

    Per trial: the raw trajectory CSV, the frame-label CSV, one
    detection file per view, and one feature store per view and
    variant, all indexed by a manifest at the dataset root.  Identical
    (config, seed) reruns produce byte-identical files.
    """
    cfg.validate()
    cams = default_cameras(cfg)
    scene_digest = canonical_digest(dataclasses.asdict(cfg))
    os.makedirs(os.path.join(out_dir, "trials"), exist_ok=True)
    entries = []
    for pid, i, seed, traj, meta in _iter_trials(cfg):
        tid = meta.trial_id
        tdir = os.path.join(out_dir, "trials", tid)
        os.makedirs(tdir, exist_ok=True)
        provenance = {"trial_id": tid, "seed": seed, "scene_digest": scene_digest}
        files = {}

        save_joint_trajectories(os.path.join(tdir, "trajectory.csv"), traj)
        files["trajectory"] = f"trials/{tid}/trajectory.csv"

        at_fps, _, _ = build_trial_frames(traj, meta)
        labels = label_frames(at_fps, meta)
        save_frame_labels(os.path.join(tdir, "labels.csv"), labels, provenance)
        files["labels"] = f"trials/{tid}/labels.csv"

        for view in meta.available_views:
            records = render_rois(at_fps, meta, cams[view], cfg, seed)
            det_name = f"{view}.detections.jsonl"
            save_detection_records(
                os.path.join(tdir, det_name),
                dict(provenance, view_id=view),
                records,
            )
            files[f"detections_{view}"] = f"trials/{tid}/{det_name}"
            for variant in VARIANTS:
                feat_entries, data = encode_view_features(
                    records, variant, cfg, cfg.seed, seed
                )
                feat_name = f"{view}.{variant}.features.bin"
                save_feature_store(
                    os.path.join(tdir, feat_name),
                    feat_entries,
                    data,
                    dict(provenance, view_id=view, variant=variant,
                         map_seed=cfg.seed),
                )
                files[f"features_{view}_{variant}"] = f"trials/{tid}/{feat_name}"
        entries.append(TrialEntry(meta=meta, files=files))
    manifest_path = os.path.join(out_dir, "manifest.json")
    save_manifest(
        manifest_path,
        {
            "seed": cfg.seed,
            "scene_digest": scene_digest,
            "scene_config": dataclasses.asdict(cfg),
        },
        entries,
    )
    return manifest_path
