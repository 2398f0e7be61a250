"""Trajectory IO, filtering, resampling, and frame labeling."""

import math

import numpy as np
import pytest

from lifthv import kinlab
from lifthv.errors import (
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


def make_traj(rate_hz=100.0, seconds=3.0, extra=None, fn=None):
    n = int(round(rate_hz * seconds)) + 1
    t = np.arange(n) / rate_hz
    if fn is None:
        fn = lambda name, t: np.stack([0.3 + 0.01 * t, 0.1 * t, 0.5 + 0.05 * t], axis=1)
    names = list(kinlab.REQUIRED_LANDMARKS) + list(extra or [])
    joints = {name: fn(name, t) for name in names}
    return kinlab.JointTrajectory(
        trial_id="T", sample_rate_hz=rate_hz, timestamps=t, joints=joints
    )


def make_meta(**kw):
    base = dict(
        participant_id="P01", trial_id="P01_T01", lift_origin="floor",
        hand_config="broad", box_mass_kg=9.0, lift_start_frame=15,
        lift_end_frame=55, frame_count=80, fps=30.0,
        available_views=("V1", "V2", "V3"),
    )
    base.update(kw)
    return kinlab.LiftTrialMeta(**base)


def test_trajectory_roundtrip_is_byte_stable(tmp_path):
    traj = make_traj(extra=["head"])
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    kinlab.save_joint_trajectories(p1, traj)
    back = kinlab.parse_joint_trajectories(p1, trial_id="T")
    assert back.sample_rate_hz == traj.sample_rate_hz
    np.testing.assert_array_equal(back.timestamps, traj.timestamps)
    for name in traj.joints:
        np.testing.assert_array_equal(back.joints[name], traj.joints[name])
    kinlab.save_joint_trajectories(p2, back)
    assert p1.read_bytes() == p2.read_bytes()


def test_parse_rejects_malformed_files(tmp_path):
    good = tmp_path / "g.csv"
    kinlab.save_joint_trajectories(good, make_traj(seconds=0.5))
    lines = good.read_text().splitlines()

    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(SchemaViolation):
        kinlab.parse_joint_trajectories(bad)

    bad.write_text("\n".join([lines[0], lines[1], lines[2] + ",9.9"]) + "\n")
    with pytest.raises(LengthMismatch):
        kinlab.parse_joint_trajectories(bad)

    header = lines[1].replace("left_hand_tip.z", "left_hand_tip.w")
    bad.write_text("\n".join([lines[0], header] + lines[2:]) + "\n")
    with pytest.raises(SchemaViolation):
        kinlab.parse_joint_trajectories(bad)


def test_validation_catches_bad_time_and_missing_landmarks():
    traj = make_traj(seconds=0.5)
    traj.timestamps = traj.timestamps.copy()
    traj.timestamps[3] = traj.timestamps[2]
    with pytest.raises(NonMonotonicTime):
        traj.validate()

    traj = make_traj(seconds=0.5)
    del traj.joints["left_malleolus"]
    with pytest.raises(MissingLandmark):
        traj.validate()

    traj = make_traj(seconds=0.5)
    traj.joints["left_hand_tip"] = traj.joints["left_hand_tip"][:-2]
    with pytest.raises(LengthMismatch):
        traj.validate()


def test_lowpass_preserves_dc():
    traj = make_traj(fn=lambda name, t: np.full((t.size, 3), 0.42))
    out = kinlab.lowpass_filter(traj)
    for name in out.joints:
        np.testing.assert_allclose(out.joints[name], 0.42, atol=1e-9)


def test_lowpass_attenuation_matches_squared_butterworth_response():
    # two passes of an order-4 low-pass give |H|^2 = 1 / (1 + (f/fc)^8)
    rate, seconds = 100.0, 20.0
    n = int(rate * seconds) + 1
    t = np.arange(n) / rate

    def probe(freq_hz):
        sig = np.sin(2 * math.pi * freq_hz * t)
        traj = make_traj(rate, seconds, fn=lambda name, tt: np.stack([sig] * 3, axis=1))
        out = kinlab.lowpass_filter(traj, cutoff_hz=6.0, order=4)
        interior = out.joints["left_hand_tip"][n // 4 : -n // 4, 0]
        return math.sqrt(2.0) * float(np.sqrt(np.mean(interior**2)))

    gain_stop = probe(20.0)
    assert gain_stop < 1e-3  # analytic value 1/(1+(20/6)^8) ~ 6.6e-5
    gain_cut = probe(6.0)
    assert gain_cut == pytest.approx(0.5, rel=0.05)
    gain_pass = probe(0.5)
    assert gain_pass == pytest.approx(1.0, rel=0.01)


def test_lowpass_is_zero_phase():
    # a passband sine comes back in phase; a causal pass would lag visibly
    rate, seconds = 100.0, 10.0
    n = int(rate * seconds) + 1
    t = np.arange(n) / rate
    sig = np.sin(2 * math.pi * 1.0 * t)
    traj = make_traj(rate, seconds, fn=lambda name, tt: np.stack([sig] * 3, axis=1))
    out = kinlab.lowpass_filter(traj)
    got = out.joints["left_hand_tip"][:, 0]
    lo, hi = n // 4, 3 * n // 4
    np.testing.assert_allclose(got[lo:hi], sig[lo:hi], atol=2e-3)


def test_lowpass_validation():
    with pytest.raises(NyquistViolation):
        kinlab.lowpass_filter(make_traj(rate_hz=10.0, seconds=3.0), cutoff_hz=6.0)
    with pytest.raises(TooShort):
        kinlab.lowpass_filter(make_traj(rate_hz=100.0, seconds=0.1))
    traj = make_traj(seconds=0.5)
    traj.joints["left_hand_tip"] = traj.joints["left_hand_tip"].copy()
    traj.joints["left_hand_tip"][5, 1] = np.nan
    with pytest.raises(NonFiniteInput):
        kinlab.lowpass_filter(traj)
    with pytest.raises(ConfigError):
        kinlab.lowpass_filter(make_traj(seconds=0.5), cutoff_hz=-1.0)


def test_resample_decimates_exactly_on_integer_ratio():
    traj = make_traj(rate_hz=90.0, seconds=2.0)
    out = kinlab.resample(traj, target_hz=30.0)
    assert out.sample_rate_hz == 30.0
    np.testing.assert_array_equal(out.timestamps, traj.timestamps[::3])
    np.testing.assert_array_equal(
        out.joints["left_hand_tip"], traj.joints["left_hand_tip"][::3]
    )


def test_resample_interpolates_on_fractional_ratio():
    # linear signals survive linear interpolation exactly
    traj = make_traj(rate_hz=100.0, seconds=2.0)
    out = kinlab.resample(traj, target_hz=30.0)
    assert out.sample_rate_hz == 30.0
    expected_t = np.arange(61) / 30.0
    np.testing.assert_allclose(out.timestamps, expected_t, atol=1e-12)
    np.testing.assert_allclose(
        out.joints["left_hand_tip"][:, 0], 0.3 + 0.01 * expected_t, atol=1e-12
    )
    with pytest.raises(ConfigError):
        kinlab.resample(traj, target_hz=200.0)


def test_compute_h_and_v_from_known_geometry():
    joints = {
        "left_hand_tip": np.array([0.4, 0.2, 0.5]),
        "right_hand_tip": np.array([0.4, 0.0, 0.7]),
        "left_malleolus": np.array([0.0, 0.2, 0.07]),
        "right_malleolus": np.array([0.0, 0.0, 0.07]),
    }
    assert kinlab.compute_h(joints) == pytest.approx(400.0)
    assert kinlab.compute_v(joints) == pytest.approx(600.0)
    joints["right_hand_tip"] = np.array([0.1, 0.4, 0.7])
    # hands midpoint (0.25, 0.3), ankles midpoint (0.0, 0.1)
    assert kinlab.compute_h(joints) == pytest.approx(
        1000.0 * math.hypot(0.25, 0.2)
    )
    with pytest.raises(MissingLandmark):
        kinlab.compute_h({"left_hand_tip": np.zeros(3)})
    joints["left_hand_tip"] = np.array([np.inf, 0.0, 0.0])
    with pytest.raises(NonFiniteInput):
        kinlab.compute_v(joints)


def test_label_frames_alignment_and_absence():
    # trajectory covers only the first half second: later frames are absent
    traj = make_traj(rate_hz=100.0, seconds=0.5)
    meta = make_meta(frame_count=30, lift_start_frame=2, lift_end_frame=10)
    labels = kinlab.label_frames(traj, meta)
    indices = [lab.frame_index for lab in labels]
    assert indices == list(range(16))  # frame 15 sits at 0.5 s exactly
    for lab in labels:
        s = int(round(lab.frame_index / meta.fps * traj.sample_rate_hz))
        assert lab.h_mm == pytest.approx(kinlab.compute_h(traj.frame_joints(s)))
        assert lab.v_mm == pytest.approx(kinlab.compute_v(traj.frame_joints(s)))

    with pytest.raises(EmptyOverlap):
        shifted = make_traj(rate_hz=100.0, seconds=0.5)
        shifted.timestamps = shifted.timestamps + 100.0
        kinlab.label_frames(shifted, meta)


def test_meta_validation():
    make_meta().validate()
    for kw in (
        dict(lift_origin="table"), dict(hand_config="wide"),
        dict(box_mass_kg=7.0), dict(lift_start_frame=60, lift_end_frame=50),
        dict(lift_end_frame=90), dict(available_views=("V9",)),
        dict(frame_count=0), dict(fps=0.0),
    ):
        with pytest.raises(SchemaViolation):
            make_meta(**kw).validate()


def test_label_csv_roundtrip(tmp_path):
    labels = [kinlab.FrameLabel(i, 100.0 + i, 200.0 + 0.5 * i) for i in range(5)]
    path = tmp_path / "labels.csv"
    kinlab.save_frame_labels(path, labels, {"seed": 7, "config_digest": "ab12"})
    header, back = kinlab.load_frame_labels(path)
    assert header["seed"] == 7
    assert header["kind"] == "frame_labels"
    assert [(l.frame_index, l.h_mm, l.v_mm) for l in back] == [
        (l.frame_index, l.h_mm, l.v_mm) for l in labels
    ]
    other = tmp_path / "labels2.csv"
    kinlab.save_frame_labels(other, back, header)
    assert path.read_bytes() == other.read_bytes()


def test_manifest_roundtrip(tmp_path):
    entries = [
        kinlab.TrialEntry(
            meta=make_meta(trial_id=f"P01_T{k:02d}"),
            files={"trajectory": f"trajectories/P01_T{k:02d}.csv"},
        )
        for k in range(3)
    ]
    path = tmp_path / "manifest.json"
    kinlab.save_manifest(path, {"seed": 11, "config_digest": "cd34"}, entries)
    header, back = kinlab.load_manifest(path)
    assert header["seed"] == 11
    assert len(back) == 3
    assert back[0].meta == entries[0].meta
    assert back[0].files == entries[0].files
    other = tmp_path / "manifest2.json"
    kinlab.save_manifest(other, header, back)
    assert path.read_bytes() == other.read_bytes()

    path.write_text("{}")
    with pytest.raises(SchemaViolation):
        kinlab.load_manifest(path)
