"""Feature assembly, fusion, windowing, and the embedding store."""

import numpy as np
import pytest

from lifthv import featpipe
from lifthv.errors import DimMismatch, FrameIndexMismatch, LengthMismatch, SchemaViolation
from lifthv.featpipe import (
    FRAME_DIM,
    ROI_DIM,
    FeatureStore,
    FrameVector,
    ViewSequence,
    concat_window_batches,
    denormalize_targets,
    extract_eval_sequences,
    fuse_view_sequences,
    fuse_views,
    geometric_features,
    load_feature_store,
    make_windows,
    normalize_targets,
    pool_frame_features,
    save_feature_store,
    window_starts,
)


def make_seq(n, seed=0, view_id="V1", invalid=(), scores=None):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n, FRAME_DIM)).astype(np.float32)
    valid = np.ones(n, dtype=bool)
    for i in invalid:
        valid[i] = False
        values[i] = 0.0
    geom = np.full(n, -np.inf)
    if scores is not None:
        geom[: len(scores)] = scores
    return ViewSequence(values=values, valid=valid, geom_score=geom, view_id=view_id)


def test_geometric_features():
    got = geometric_features((0.0, 0.0, 640.0, 360.0))
    np.testing.assert_allclose(got, [0.5, 0.5, 0.26, 0.41, 0.235])
    with pytest.raises(SchemaViolation):
        geometric_features((0, 0, 1, 1), image_size=(0, 720))


def test_pool_frame_features():
    a = np.zeros(ROI_DIM)
    b = np.ones(ROI_DIM)
    pooled, valid = pool_frame_features([a, b])
    assert valid
    np.testing.assert_allclose(pooled, 0.5)
    pooled, valid = pool_frame_features([])
    assert not valid
    np.testing.assert_array_equal(pooled, 0.0)
    with pytest.raises(DimMismatch):
        pool_frame_features([np.zeros(10)])


def make_frame_vector(view_id, fill, geom, score, valid=True, frame_index=3):
    values = np.zeros(FRAME_DIM)
    values[:ROI_DIM] = fill
    values[ROI_DIM:] = geom
    return FrameVector(
        frame_index=frame_index, values=values, valid=valid,
        view_id=view_id, geom_score=score,
    )


def test_fuse_views_means_embeddings_and_picks_best_geometry():
    fused = fuse_views([
        make_frame_vector("V1", 1.0, [1, 1, 1, 1, 1], 0.5),
        make_frame_vector("V2", 3.0, [2, 2, 2, 2, 2], 0.9),
        make_frame_vector("V3", 5.0, [3, 3, 3, 3, 3], 0.7, valid=False),
    ])
    assert fused.valid
    np.testing.assert_allclose(fused.values[:ROI_DIM], 2.0)
    np.testing.assert_allclose(fused.values[ROI_DIM:], 2.0)
    assert fused.geom_score == 0.9


def test_fuse_views_tie_and_permutation_invariance():
    views = [
        make_frame_vector("V2", 2.0, [9, 9, 9, 9, 9], 0.8),
        make_frame_vector("V1", 4.0, [7, 7, 7, 7, 7], 0.8),
    ]
    fused_a = fuse_views(views)
    fused_b = fuse_views(list(reversed(views)))
    np.testing.assert_array_equal(fused_a.values, fused_b.values)
    np.testing.assert_allclose(fused_a.values[ROI_DIM:], 7.0)  # V1 wins the tie


def test_fuse_views_edge_cases():
    no_valid = fuse_views([make_frame_vector("V1", 1.0, [1] * 5, 0.9, valid=False)])
    assert not no_valid.valid
    np.testing.assert_array_equal(no_valid.values, 0.0)

    no_object = fuse_views([make_frame_vector("V1", 1.0, [0] * 5, -np.inf)])
    assert no_object.valid
    np.testing.assert_array_equal(no_object.values[ROI_DIM:], 0.0)

    with pytest.raises(FrameIndexMismatch):
        fuse_views([
            make_frame_vector("V1", 1.0, [1] * 5, 0.5, frame_index=3),
            make_frame_vector("V2", 1.0, [1] * 5, 0.5, frame_index=4),
        ])
    with pytest.raises(DimMismatch):
        fuse_views([FrameVector(0, np.zeros(7), True, "V1", 0.5)])


def test_fuse_view_sequences_matches_per_frame_fusion():
    n = 40
    rng = np.random.default_rng(11)
    seqs = [
        make_seq(n, seed=1, view_id="V1", invalid=(3, 5),
                 scores=rng.random(n)),
        make_seq(n, seed=2, view_id="V2", invalid=(5, 7),
                 scores=rng.random(n)),
        make_seq(n, seed=3, view_id="V3", invalid=(5,) + tuple(range(20, 40)),
                 scores=rng.random(n)),
    ]
    fused = fuse_view_sequences(seqs)
    for f in range(n):
        per_frame = fuse_views([
            FrameVector(f, s.values[f].astype(np.float64), bool(s.valid[f]),
                        s.view_id, float(s.geom_score[f]))
            for s in seqs
        ])
        assert bool(fused.valid[f]) == per_frame.valid
        np.testing.assert_allclose(
            fused.values[f], per_frame.values.astype(np.float32), atol=1e-6
        )
    assert not fused.valid[5]


def test_window_starts_rules():
    assert window_starts(80) == [0]
    assert window_starts(100) == [0]
    assert window_starts(120) == [0, 50]
    assert window_starts(150) == [0, 50]
    assert window_starts(170) == [0, 50, 100]
    assert window_starts(250) == [0, 50, 100, 150]
    assert window_starts(260) == [0, 50, 100, 150, 200]
    assert window_starts(30) == [0]
    with pytest.raises(LengthMismatch):
        window_starts(0)


def test_make_windows_masks_and_targets():
    n = 120
    seq = make_seq(n, invalid=(4, 110))
    targets = np.stack([np.arange(n) * 2.0, np.arange(n) * 3.0], axis=1)
    target_valid = np.ones(n, dtype=bool)
    target_valid[7] = False
    batch = make_windows(seq, targets, target_valid)
    assert batch.x.shape == (2, 100, FRAME_DIM)
    assert batch.x.dtype == np.float32

    # window 0 covers frames 0..99
    assert not batch.mask[0, 4] and not batch.mask[0, 7]
    assert batch.mask[0, 8]
    np.testing.assert_array_equal(batch.frame_index[0], np.arange(100))

    # window 1 covers frames 50..119 then padding
    assert batch.frame_index[1, 69] == 119
    assert np.all(batch.frame_index[1, 70:] == -1)
    assert not batch.mask[1, 70:].any()
    assert not batch.mask[1, 60]  # frame 110 has no valid features
    np.testing.assert_array_equal(batch.x[1, 70:], 0.0)

    # targets are normalized mm at valid positions, zero elsewhere
    pos = (1, 10)  # frame 60
    np.testing.assert_allclose(
        denormalize_targets(batch.y[pos]), targets[60], rtol=1e-6
    )
    np.testing.assert_array_equal(batch.y[1, 70:], 0.0)

    both = concat_window_batches([batch, batch])
    assert both.x.shape[0] == 4


def test_normalize_roundtrip():
    mm = np.array([[123.0, 456.0], [0.0, 2000.0]])
    np.testing.assert_allclose(denormalize_targets(normalize_targets(mm)), mm)
    np.testing.assert_allclose(normalize_targets([2000.0]), [1.0])


def test_extract_eval_sequences_positions_events():
    n = 80
    seq = make_seq(n, invalid=(60,))
    targets = np.stack([np.linspace(100, 500, n), np.linspace(100, 900, n)], axis=1)
    valid = np.ones(n, dtype=bool)
    wins = extract_eval_sequences(seq, targets, valid, lift_start_frame=20, lift_end_frame=60)
    start, end = wins
    assert start.phase == "start" and end.phase == "end"
    assert start.frame_start == 0 and start.event_offset == 20
    assert end.frame_start == 10 and end.event_offset == 50
    np.testing.assert_allclose(start.target_mm, targets[20])
    np.testing.assert_allclose(end.target_mm, targets[60])
    assert not start.mask[60]  # frame 60 has no valid features
    assert not end.mask[50]  # event frame itself lacks features
    assert not end.mask[70:].any()  # beyond trial end
    np.testing.assert_array_equal(end.x[70:], 0.0)

    bad_valid = valid.copy()
    bad_valid[20] = False
    with pytest.raises(LengthMismatch):
        extract_eval_sequences(seq, targets, bad_valid, 20, 60)
    with pytest.raises(LengthMismatch):
        extract_eval_sequences(seq, targets, valid, 20, 95)


def test_feature_store_roundtrip_is_byte_stable(tmp_path):
    rng = np.random.default_rng(4)
    entries = [(0, "hand"), (0, "wooden box"), (1, "hand"), (3, "shoe")]
    data = rng.standard_normal((4, ROI_DIM)).astype(np.float32)
    p1 = tmp_path / "a.lft"
    p2 = tmp_path / "b.lft"
    save_feature_store(p1, entries, data, {"trial_id": "T", "view_id": "V1", "seed": 9})
    store = load_feature_store(p1)
    assert store.header["dim"] == ROI_DIM
    assert store.header["seed"] == 9
    assert store.entries == entries
    np.testing.assert_array_equal(store.data, data)
    np.testing.assert_array_equal(store.vectors_for_frame(0), data[:2])
    assert store.vectors_for_frame(2).shape == (0, ROI_DIM)

    save_feature_store(p2, store.entries, store.data, store.header)
    assert p1.read_bytes() == p2.read_bytes()


def test_feature_store_rejects_corruption(tmp_path):
    path = tmp_path / "bad.lft"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(SchemaViolation):
        load_feature_store(path)

    good = tmp_path / "good.lft"
    save_feature_store(good, [(0, "hand")], np.zeros((1, ROI_DIM), np.float32), {})
    raw = good.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(LengthMismatch):
        load_feature_store(path)
    with pytest.raises(LengthMismatch):
        save_feature_store(path, [(0, "hand"), (1, "hand")], np.zeros((1, ROI_DIM), np.float32))
