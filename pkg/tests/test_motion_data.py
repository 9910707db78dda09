import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conductor_motion.audio_features import FeatureConfig, onset_envelope, tempo_and_plp
from conductor_motion.exceptions import (
    DegeneratePoseError,
    FormatError,
    RejectedSequenceError,
    SamplingError,
    ShapeError,
)
from conductor_motion.motion_data import (
    JOINTS,
    TEMPLATE,
    Corpus,
    DatasetManifest,
    J,
    MotionSequence,
    ingest_pose_json,
    load_corpus,
    load_manifest,
    load_motion,
    make_synthetic_dataset,
    min_negative_offset,
    normalize_motion,
    random_scale,
    sample_batch,
    sample_pair,
    save_motion,
    shoulder_widths,
    vertical_speed,
)


def coco_frames(n, rng, conf=0.9):
    base = np.zeros((17, 3))
    base[:13, :2] = TEMPLATE
    base[13:, :2] = TEMPLATE[11:13].mean(axis=0) + [0, 100]
    base[:, 2] = conf
    frames = np.repeat(base[None], n, axis=0)
    frames[:, :, :2] += rng.normal(0, 2, size=(n, 17, 2))
    return frames


def test_ingest_confident_frames(rng):
    frames = coco_frames(100, rng)
    m = ingest_pose_json({"frames": frames.tolist()}, 30.0)
    assert m.frames.shape == (100, 13, 2)
    np.testing.assert_allclose(m.frames, frames[:, :13, :2])


def test_ingest_interpolates_low_confidence_wrist(rng):
    frames = coco_frames(100, rng)
    frames[50, J["right_wrist"], 2] = 0.05
    m = ingest_pose_json({"frames": frames.tolist()}, 30.0)
    mid = 0.5 * (frames[49, J["right_wrist"], :2] + frames[51, J["right_wrist"], :2])
    np.testing.assert_allclose(m.frames[50, J["right_wrist"]], mid)


def test_neck_is_shoulder_midpoint(rng):
    m = ingest_pose_json({"frames": coco_frames(20, rng).tolist()}, 30.0)
    expect = 0.5 * (m.frames[:, J["left_shoulder"]] + m.frames[:, J["right_shoulder"]])
    np.testing.assert_allclose(m.neck, expect)
    assert "neck" not in JOINTS


def test_ingest_picks_most_confident_person_and_alphapose_layout(rng):
    a, b = coco_frames(3, rng), coco_frames(3, rng, conf=0.4) + [500, 0, 0]
    m = ingest_pose_json({"frames": [[a[i].tolist(), b[i].tolist()] for i in range(3)]}, 25.0)
    np.testing.assert_allclose(m.frames, a[:, :13, :2])
    dets = [{"image_id": f"{i}.jpg", "keypoints": a[i].ravel().tolist(), "score": 2.0} for i in (2, 0, 1)]
    dets.append({"image_id": "1.jpg", "keypoints": b[1].ravel().tolist(), "score": 1.0})
    m2 = ingest_pose_json(dets, 25.0)
    np.testing.assert_allclose(m2.frames, a[:, :13, :2])


def test_ingest_rejects_never_confident_joint(rng):
    frames = coco_frames(10, rng)
    frames[:, J["left_ear"], 2] = 0.0
    with pytest.raises(RejectedSequenceError):
        ingest_pose_json({"frames": frames.tolist()}, 30.0)
    with pytest.raises(RejectedSequenceError):
        ingest_pose_json({"frames": []}, 30.0)
    with pytest.raises(FormatError):
        ingest_pose_json({"people": []}, 30.0)


def test_ingest_empty_boundary_frame_without_neighbor(rng):
    frames = [[]] + coco_frames(1, rng, conf=0.1).tolist()
    with pytest.raises(RejectedSequenceError):
        ingest_pose_json({"frames": frames}, 30.0)


def test_ingest_holds_edges(rng):
    frames = coco_frames(10, rng)
    frames[:3, J["nose"], 2] = 0.0
    m = ingest_pose_json({"frames": frames.tolist()}, 30.0)
    np.testing.assert_allclose(m.frames[:3, J["nose"]], np.repeat(frames[3:4, J["nose"], :2], 3, axis=0))


def test_ingest_wrong_keypoint_count():
    with pytest.raises(ShapeError):
        ingest_pose_json({"frames": [[[0, 0, 1]] * 13]}, 30.0)


def test_normalize_definition_and_idempotence(rng):
    m = MotionSequence(TEMPLATE[None] + rng.normal(0, 3, (50, 13, 2)), 30.0)
    n = normalize_motion(m)
    assert np.median(shoulder_widths(n.frames)) == pytest.approx(1.0)
    np.testing.assert_allclose(np.median(n.neck, axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(normalize_motion(n).frames, n.frames, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(k=st.floats(0.05, 20.0), tx=st.floats(-1e3, 1e3), ty=st.floats(-1e3, 1e3), seed=st.integers(0, 1000))
def test_normalize_similarity_invariance(k, tx, ty, seed):
    frames = TEMPLATE[None] + np.random.default_rng(seed).normal(0, 3, (20, 13, 2))
    a = normalize_motion(frames)
    b = normalize_motion(k * frames + np.array([tx, ty]))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_normalize_degenerate():
    frames = np.zeros((5, 13, 2))
    with pytest.raises(DegeneratePoseError):
        normalize_motion(frames)


def test_random_scale_contract(rng):
    w = TEMPLATE[None].repeat(4, axis=0)
    out, s = random_scale(w, rng)
    assert 0.8 <= s <= 1.2
    np.testing.assert_allclose(np.median(shoulder_widths(out)) / np.median(shoulder_widths(w)), s)
    same, s1 = random_scale(w, rng, (1.0, 1.0))
    assert s1 == 1.0 and np.array_equal(same, w)
    a = [random_scale(w, np.random.default_rng(7))[1] for _ in range(2)]
    assert a[0] == a[1]


def test_vertical_speed_peaks_at_cusp():
    y = np.abs(np.arange(-5, 6)).astype(float)
    sp = vertical_speed(y)
    assert sp[5] == 1.0 and np.all(sp == 1.0)
    y2 = np.array([0, 0, 0, 3, 0, 0.0])
    assert np.argmax(vertical_speed(y2)) in (2, 3, 4)


def _corpus(n_entries, length, rng):
    feats = [rng.standard_normal((length, 24)) for _ in range(n_entries)]
    mots = [rng.standard_normal((length, 26)) for _ in range(n_entries)]
    return Corpus(feats, mots, 30.0)


def test_positive_pairs_share_start(rng):
    c = _corpus(3, 300, rng)
    for _ in range(50):
        p = sample_pair(c, True, 60, rng)
        assert (p.entry, p.music_start) == (p.motion_entry, p.motion_start)
        assert p.label == 1


def test_same_entry_negatives_respect_offset(rng):
    c = _corpus(1, 400, rng)
    gap = min_negative_offset(60, 30.0)
    assert gap == 60
    for _ in range(200):
        p = sample_pair(c, False, 60, rng)
        assert abs(p.music_start - p.motion_start) >= 60 and p.label == 0


def test_both_negative_branches_observed(rng):
    c = _corpus(2, 400, rng)
    same = other = 0
    for _ in range(1000):
        p = sample_pair(c, False, 60, rng)
        if p.entry == p.motion_entry:
            same += 1
        else:
            other += 1
    assert same > 0 and other > 0


def test_single_short_entry_cannot_sample(rng):
    c = _corpus(1, 100, rng)
    with pytest.raises(SamplingError):
        sample_pair(c, False, 60, rng)
    with pytest.raises(SamplingError):
        sample_pair(_corpus(2, 50, rng), True, 60, rng)


def test_sample_batch_layout(rng):
    x, y, labels = sample_batch(_corpus(3, 300, rng), 10, 60, rng)
    assert x.shape == (10, 60, 24) and y.shape == (10, 60, 26)
    np.testing.assert_array_equal(labels, [1] * 5 + [0] * 5)


def test_corpus_length_guard(rng):
    with pytest.raises(ShapeError):
        Corpus([np.zeros((100, 2))], [np.zeros((90, 26))], 30.0)
    c = Corpus([np.zeros((101, 2))], [np.zeros((100, 13, 2))], 30.0)
    assert c.lengths == [100] and c.motions[0].shape == (100, 26)


def test_motion_json_round_trip(tmp_path, rng):
    m = MotionSequence(TEMPLATE[None] + rng.normal(0, 5, (30, 13, 2)), 29.97)
    save_motion(m, tmp_path / "m.json")
    back = load_motion(tmp_path / "m.json")
    np.testing.assert_allclose(back.frames, m.frames, rtol=1e-8)
    assert back.fps == 29.97 and back.joint_names == JOINTS
    doc = json.loads((tmp_path / "m.json").read_text())
    assert len(doc["frames"][0]) == 13


def test_manifest_validation(tmp_path):
    bad = DatasetManifest([{"audio_feature_path": "a", "motion_path": "b", "duration_s": 1}], {"train": [0, 3]})
    with pytest.raises(FormatError):
        bad.validate()
    with pytest.raises(FormatError):
        DatasetManifest([{"motion_path": "b"}], {"train": [0]}).validate()


def test_synthetic_dataset_on_disk(tmp_path):
    audio, motions, manifest = make_synthetic_dataset(3, 10.0, seed=4, out_dir=tmp_path)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert len(loaded.entries) == 3
    loaded.validate(root=tmp_path)
    corpus = load_corpus(loaded, tmp_path)
    assert len(corpus) == 3 and corpus.motions[0].shape[1] == 26
    a2, m2, _ = make_synthetic_dataset(3, 10.0, seed=4)
    assert all(np.array_equal(x[0].samples, y[0].samples) for x, y in zip(audio, a2))
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(motions, m2))


def test_synthetic_wrist_extrema_on_clicks():
    audio, motions, _ = make_synthetic_dataset(3, 12.0, seed=11)
    for (w, clicks, bpm), m in zip(audio, motions):
        y = m.frames[:, J["right_wrist"], 1]
        half = int(0.5 * 60.0 / bpm * m.fps)
        for c in clicks:
            k = int(round(c * m.fps))
            if k - half < 0 or k + half >= len(y):
                continue
            lowest = k - half + int(np.argmax(y[k - half : k + half + 1]))
            assert abs(lowest - c * m.fps) <= 1


def test_synthetic_tempo_recoverable():
    cfg = FeatureConfig()
    audio, _, _ = make_synthetic_dataset(4, 20.0, seed=12)
    for w, _, bpm in audio:
        tempo, _ = tempo_and_plp(onset_envelope(w, cfg), cfg)
        assert abs(tempo - bpm) <= 3
