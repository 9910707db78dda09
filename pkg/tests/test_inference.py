import json

import numpy as np
import pytest
import torch
from PIL import Image

from conductor_motion.audio_features import AudioFeatureSequence, FeatureConfig, Waveform
from conductor_motion.exceptions import InputTooShortError, InvalidInputError
from conductor_motion.inference import (
    JOINT_COLORS,
    InferenceConfig,
    blend_chunks,
    chunk_starts,
    export_for_pose_transfer,
    fit_to_canvas,
    generate_motion,
    generate_normalized,
    render_skeleton,
    smooth_motion,
    sync_score,
)
from conductor_motion.models import ModelBundle, generate
from conductor_motion.motion_data import JOINTS, TEMPLATE, MotionSequence, ingest_pose_json, synth_audio


@pytest.fixture
def gen_bundle(tiny_cfg):
    torch.manual_seed(0)
    return ModelBundle(tiny_cfg, stage="generator").eval()


def test_chunk_starts_cover_sequence():
    assert chunk_starts(60, 60) == [0]
    s = chunk_starts(200, 60)
    assert s[0] == 0 and s[-1] == 140 and all(b - a <= 30 for a, b in zip(s, s[1:]))


def test_blend_midpoint_is_even_mix():
    a, b = np.zeros((60, 2)), np.ones((60, 2))
    out = blend_chunks([a, b], [0, 30], 90)
    np.testing.assert_allclose(out[45], 0.5 * (a[45] + b[15]))
    np.testing.assert_array_equal(out[:30], 0)
    np.testing.assert_array_equal(out[60:], 1)


def test_single_chunk_equals_direct_generate(gen_bundle, rng):
    f = rng.standard_normal((60, 24)).astype(np.float32)
    np.testing.assert_allclose(generate_normalized(gen_bundle, f), generate(gen_bundle, f), atol=0)


def test_generate_normalized_length(gen_bundle, rng):
    f = rng.standard_normal((307, 24)).astype(np.float32)
    assert generate_normalized(gen_bundle, f).shape == (307, 26)
    with pytest.raises(InputTooShortError):
        generate_normalized(gen_bundle, f[:59])


def test_generate_motion_from_waveform(gen_bundle):
    x, _ = synth_audio(10.0, 100, 0.3, np.random.default_rng(0))
    m = generate_motion(Waveform(x, 22050), gen_bundle)
    assert abs(len(m) - 300) <= 1 and m.frames.shape[1:] == (13, 2)
    with pytest.raises(InvalidInputError):
        generate_motion(Waveform(x, 22050), ModelBundle(gen_bundle.config, "amc"))
    with pytest.raises(InputTooShortError):
        generate_motion(Waveform(x[:22050], 22050), gen_bundle)


def test_smoothing_cases():
    step = np.zeros((10, 13, 2))
    step[5:] = 1.0
    m = MotionSequence(step, 30.0)
    out = smooth_motion(m, 5).frames[:, 0, 0]
    np.testing.assert_allclose(out, [0, 0, 0, 0.2, 0.4, 0.6, 0.8, 1, 1, 1])
    np.testing.assert_array_equal(smooth_motion(m, 1).frames, step)
    const = MotionSequence(np.full((8, 13, 2), 3.5), 30.0)
    np.testing.assert_allclose(smooth_motion(const, 5).frames, 3.5)
    with pytest.raises(InvalidInputError):
        smooth_motion(m, 4)


def test_render_frames(tmp_path, rng):
    frames = TEMPLATE[None] + rng.normal(0, 4, (6, 13, 2))
    m = MotionSequence(frames, 30.0)
    paths = render_skeleton(m, tmp_path, canvas=(256, 256), workers=2)
    assert [p.split("/")[-1] for p in paths] == [f"frame_{i:06d}.png" for i in range(6)]
    projected = fit_to_canvas(frames, (256, 256))
    assert projected.min() >= 0 and projected.max() <= 256
    img = np.asarray(Image.open(paths[3]))
    checked = 0
    for j, name in enumerate(JOINTS):
        x, y = np.round(projected[3, j]).astype(int)
        others = np.delete(projected[3], j, axis=0)
        # skip joints whose disc overlaps a later-drawn one
        if np.min(np.linalg.norm(others[j:] - projected[3, j], axis=1), initial=99) < 11:
            continue
        assert tuple(img[y, x]) == JOINT_COLORS[name]
        checked += 1
    assert checked >= 8


def test_sync_score_contract(tiny_cfg, rng):
    torch.manual_seed(0)
    amc = ModelBundle(tiny_cfg).eval()
    f = rng.standard_normal((200, 24))
    y = rng.standard_normal((200, 26))
    mean, per = sync_score(f, y, amc, window=60, stride=30)
    assert len(per) == (200 - 60) // 30 + 1
    assert np.all((per > 0) & (per < 1)) and mean == pytest.approx(per.mean())
    seq = AudioFeatureSequence(f, 30.0, 100.0, [str(i) for i in range(24)])
    m = MotionSequence(TEMPLATE[None] + rng.normal(0, 3, (200, 13, 2)), 30.0)
    assert 0 < sync_score(seq, m, amc)[0] < 1
    with pytest.raises(InvalidInputError):
        sync_score(f, y, ModelBundle(tiny_cfg, "generator"))
    with pytest.raises(InputTooShortError):
        sync_score(f[:50], y[:50], amc)


def test_pose_export_round_trip(tmp_path, rng):
    m = MotionSequence(TEMPLATE[None] + rng.normal(0, 3, (12, 13, 2)), 30.0)
    export_for_pose_transfer(m, tmp_path / "p.json")
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["format"] == "coco17" and len(doc["keypoint_names"]) == 17
    assert all(len(f) == 17 for f in doc["frames"])
    legs = np.array([[kp[:2] for kp in f[13:]] for f in doc["frames"]])
    assert np.all(legs == legs[0])
    back = ingest_pose_json(doc, doc["fps"])
    np.testing.assert_allclose(back.frames, m.frames, rtol=1e-8)


def test_inference_config_validation():
    with pytest.raises(InvalidInputError):
        InferenceConfig(overlap=1.0)
    with pytest.raises(InvalidInputError):
        InferenceConfig(smooth_window=2)
