"""Conductor motion: representation, pose ingestion, normalization, pair sampling
and a synthetic beat-locked dataset.

Motion is stored as ``T x J x 2`` image-plane keypoints over the 13 upper-body
COCO joints (COCO-17 minus knees and ankles). The neck is not a stored joint;
it is derived as the shoulder midpoint wherever it is needed.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .audio_features import FeatureConfig, Waveform, load_vcf, save_audio, save_vcf
from .exceptions import (
    DegeneratePoseError,
    FormatError,
    InvalidInputError,
    RejectedSequenceError,
    SamplingError,
    ShapeError,
)
from .validation import check_motion_array, check_random_state

COCO_JOINTS = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]  # fmt: skip
JOINTS = COCO_JOINTS[:13]
N_JOINTS = len(JOINTS)
J = {name: i for i, name in enumerate(JOINTS)}

BONES = [
    ("nose", "left_eye"), ("nose", "right_eye"),
    ("left_eye", "left_ear"), ("right_eye", "right_ear"),
    ("left_shoulder", "right_shoulder"),
    ("left_shoulder", "left_elbow"), ("left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow"), ("right_elbow", "right_wrist"),
    ("left_shoulder", "left_hip"), ("right_shoulder", "right_hip"),
    ("left_hip", "right_hip"),
]  # fmt: skip

CONFIDENCE_THRESHOLD = 0.3
MOTION_FORMAT_VERSION = 1
MANIFEST_VERSION = 1


@dataclass
class MotionSequence:
    frames: np.ndarray
    fps: float
    joint_names: list = field(default_factory=lambda: list(JOINTS))

    def __post_init__(self):
        self.frames = check_motion_array(self.frames, len(self.joint_names))
        if self.fps <= 0:
            raise InvalidInputError("fps must be positive")

    def __len__(self):
        return self.frames.shape[0]

    def joint(self, name):
        return self.frames[:, self.joint_names.index(name)]

    @property
    def neck(self):
        return neck_positions(self.frames)

    def flat(self):
        """``T x 2J`` view used by the networks."""
        return self.frames.reshape(len(self), -1)

    @classmethod
    def from_flat(cls, flat, fps, joint_names=None):
        flat = np.asarray(flat)
        return cls(flat.reshape(flat.shape[0], -1, 2), fps, list(joint_names or JOINTS))


def neck_positions(frames):
    return 0.5 * (frames[:, J["left_shoulder"]] + frames[:, J["right_shoulder"]])


def vertical_speed(y):
    """Per-frame speed of a 1-D track: the larger of the absolute backward and forward steps.

    Unlike a central difference this does not cancel at a cusp.
    """
    y = np.asarray(y, dtype=np.float64)
    step = np.abs(np.diff(y))
    back = np.concatenate([[step[0]], step]) if len(step) else np.zeros(1)
    fwd = np.concatenate([step, [step[-1]]]) if len(step) else np.zeros(1)
    return np.maximum(back, fwd)


def shoulder_widths(frames):
    return np.linalg.norm(frames[:, J["left_shoulder"]] - frames[:, J["right_shoulder"]], axis=-1)


# --- ingestion -------------------------------------------------------------


def _read_pose_frames(data):
    """Return a list of per-frame ``17 x 3`` arrays (or None for empty frames)."""
    if isinstance(data, dict) and "frames" in data:
        out = []
        for people in data["frames"]:
            people = np.asarray(people, dtype=np.float64)
            if people.size == 0:
                out.append(None)
                continue
            if people.ndim == 2:
                people = people[None]
            # highest mean-confidence person
            out.append(people[np.argmax(people[:, :, 2].mean(axis=1))])
        return out
    if isinstance(data, list):
        # AlphaPose-style: [{"image_id", "keypoints": [x, y, c] * 17, "score"}, ...]
        by_frame = {}
        for det in data:
            key = det["image_id"]
            score = det.get("score", 0.0)
            if key not in by_frame or score > by_frame[key][0]:
                by_frame[key] = (score, np.asarray(det["keypoints"], dtype=np.float64).reshape(17, 3))

        def order(k):
            stem = os.path.splitext(str(k))[0]
            return (0, int(stem)) if stem.isdigit() else (1, stem)

        return [by_frame[k][1] for k in sorted(by_frame, key=order)]
    raise FormatError("unrecognized pose file layout")


def _interpolate_gaps(values, confident):
    """Fill unconfident frames of one joint by linear interpolation in time."""
    idx = np.flatnonzero(confident)
    t = np.arange(len(values))
    return np.column_stack([np.interp(t, idx, values[idx, d]) for d in range(values.shape[1])])


def ingest_pose_json(pose_file, fps):
    """Load COCO-17 detections and map them to the 13-joint upper-body set.

    Joints below ``CONFIDENCE_THRESHOLD`` are linearly interpolated from the
    nearest confident frames; gaps at either end hold the nearest value.
    """
    if isinstance(pose_file, (str, os.PathLike)):
        with open(pose_file) as fh:
            data = json.load(fh)
    else:
        data = pose_file
    frames = _read_pose_frames(data)
    if not frames:
        raise RejectedSequenceError("pose file holds no frames")
    kp = np.zeros((len(frames), 17, 3))
    for i, f in enumerate(frames):
        if f is not None:
            if f.shape != (17, 3):
                raise ShapeError(f"frame {i}: expected 17 keypoints with confidence, got {f.shape}")
            kp[i] = f
    kp = kp[:, :N_JOINTS]
    out = np.empty((len(frames), N_JOINTS, 2))
    for j in range(N_JOINTS):
        confident = kp[:, j, 2] >= CONFIDENCE_THRESHOLD
        if not confident.any():
            raise RejectedSequenceError(f"joint {JOINTS[j]} has no confident detection in any frame")
        out[:, j] = _interpolate_gaps(kp[:, j, :2], confident)
    return MotionSequence(out, fps)


# --- normalization and augmentation ----------------------------------------


def normalize_motion(m):
    """Center on the median neck position and scale by the median shoulder width."""
    frames = m.frames if isinstance(m, MotionSequence) else check_motion_array(m)
    width = np.median(shoulder_widths(frames))
    if not width > 1e-12:
        raise DegeneratePoseError("median shoulder width is zero")
    origin = np.median(neck_positions(frames), axis=0)
    normed = (frames - origin) / width
    if isinstance(m, MotionSequence):
        return MotionSequence(normed, m.fps, list(m.joint_names))
    return normed


def random_scale(window, rng, scale_range=(0.8, 1.2)):
    """Multiply every coordinate by one factor drawn uniformly from ``scale_range``."""
    lo, hi = scale_range
    s = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return window * s, s


def count_windows(n, w):
    return n // w


# --- datasets and pair sampling --------------------------------------------


@dataclass
class ClipPair:
    music: np.ndarray
    motion: np.ndarray
    label: int
    scale_s: float
    entry: int = 0
    music_start: int = 0
    motion_entry: int = 0
    motion_start: int = 0

    def __post_init__(self):
        if self.music.shape[0] != self.motion.shape[0]:
            raise ShapeError("music and motion windows differ in length")
        if self.label not in (0, 1):
            raise InvalidInputError("label must be 0 or 1")
        if not self.scale_s > 0:
            raise InvalidInputError("scale must be positive")


@dataclass
class DatasetManifest:
    entries: list
    split: dict
    seed: int = 0

    def validate(self, root=None):
        """Check split ids and, when ``root`` is given, the frame-count agreement of each entry."""
        ids = set(range(len(self.entries)))
        for name in ("train", "val"):
            bad = set(self.split.get(name, [])) - ids
            if bad:
                raise FormatError(f"split {name} references unknown entries {sorted(bad)}")
        for e in self.entries:
            for key in ("audio_feature_path", "motion_path", "duration_s"):
                if key not in e:
                    raise FormatError(f"manifest entry missing {key}")
        if root is not None:
            for i, e in enumerate(self.entries):
                feats = load_vcf(os.path.join(root, e["audio_feature_path"]))
                motion = load_motion(os.path.join(root, e["motion_path"]))
                if abs(len(feats) - len(motion)) > 2:
                    raise FormatError(
                        f"entry {i}: {len(feats)} feature frames vs {len(motion)} motion frames"
                    )
        return self

    def to_dict(self):
        return {"version": MANIFEST_VERSION, "entries": self.entries, "split": self.split, "seed": self.seed}


def save_manifest(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=1)


def load_manifest(path):
    with open(path) as fh:
        d = json.load(fh)
    try:
        return DatasetManifest(d["entries"], d["split"], d.get("seed", 0)).validate()
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing {exc}") from None


def _fmt(v):
    return float(f"{v:.9g}")


def save_motion(m, path):
    doc = {
        "version": MOTION_FORMAT_VERSION,
        "fps": float(m.fps),
        "joint_names": list(m.joint_names),
        "frames": [[[_fmt(x), _fmt(y)] for x, y in frame] for frame in m.frames],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_motion(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MOTION_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported motion file version {doc.get('version')}")
    frames = np.asarray(doc["frames"], dtype=np.float64).reshape(len(doc["frames"]), -1, 2)
    return MotionSequence(frames, doc["fps"], doc["joint_names"])


@dataclass
class Corpus:
    """In-memory paired dataset: feature matrices and flattened normalized motion."""

    features: list
    motions: list
    fps: float
    tempos: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.features) != len(self.motions):
            raise ShapeError("features and motions must pair up")
        for i, (f, m) in enumerate(zip(self.features, self.motions)):
            if abs(len(f) - len(m)) > 2:
                raise ShapeError(f"entry {i}: {len(f)} feature frames vs {len(m)} motion frames")
            n = min(len(f), len(m))
            self.features[i] = np.asarray(f[:n], dtype=np.float32)
            self.motions[i] = np.asarray(m[:n], dtype=np.float32).reshape(n, -1)

    def __len__(self):
        return len(self.features)

    def subset(self, ids):
        ids = list(ids)
        return Corpus(
            [self.features[i] for i in ids],
            [self.motions[i] for i in ids],
            self.fps,
            [self.tempos[i] for i in ids] if self.tempos else [],
        )

    @property
    def lengths(self):
        return [len(f) for f in self.features]


def load_corpus(manifest, root, split=None, normalize=True):
    ids = manifest.split[split] if split else range(len(manifest.entries))
    feats, motions, tempos, fps = [], [], [], None
    for i in ids:
        e = manifest.entries[i]
        f = load_vcf(os.path.join(root, e["audio_feature_path"]))
        m = load_motion(os.path.join(root, e["motion_path"]))
        if normalize:
            m = normalize_motion(m)
        fps = f.fps
        feats.append(f.frames)
        motions.append(m.frames)
        tempos.append(f.tempo_bpm)
    return Corpus(feats, motions, fps or 30.0, tempos)


def min_negative_offset(window, fps):
    return int(max(window, round(2.0 * fps)))


def sample_pair(corpus, correspond, window, rng, scale_range=(0.8, 1.2)):
    """Draw one corresponding or non-corresponding ``ClipPair``.

    Negatives take motion from a different entry with probability 0.5 (when
    there is one), otherwise from the same entry at a temporal offset of at
    least ``max(window, 2 s)``. Motion is random-scaled in both cases.
    """
    lengths = corpus.lengths
    if window > min(lengths):
        raise SamplingError(f"window {window} exceeds shortest entry ({min(lengths)} frames)")
    gap = min_negative_offset(window, corpus.fps)
    e = int(rng.integers(len(corpus)))
    t = int(rng.integers(lengths[e] - window + 1))
    music = corpus.features[e][t : t + window]
    if correspond:
        me, mt = e, t
    else:
        use_other = len(corpus) > 1 and rng.random() < 0.5
        if not use_other:
            choices = _offset_starts(lengths[e], window, t, gap)
            if choices.size == 0:
                if len(corpus) == 1:
                    raise SamplingError(
                        f"entry of {lengths[e]} frames too short for window {window} plus offset {gap}"
                    )
                use_other = True
        if use_other:
            me = int(rng.integers(len(corpus) - 1))
            me += me >= e
            mt = int(rng.integers(lengths[me] - window + 1))
        else:
            me, mt = e, int(rng.choice(choices))
    motion, s = random_scale(corpus.motions[me][mt : mt + window], rng, scale_range)
    return ClipPair(music, motion, int(correspond), s, e, t, me, mt)


def _offset_starts(length, window, t, gap):
    starts = np.arange(length - window + 1)
    return starts[np.abs(starts - t) >= gap]


def sample_batch(corpus, n, window, rng, scale_range=(0.8, 1.2)):
    """``n // 2`` positives followed by ``n - n // 2`` negatives, stacked into arrays."""
    pairs = [sample_pair(corpus, True, window, rng, scale_range) for _ in range(n // 2)]
    pairs += [sample_pair(corpus, False, window, rng, scale_range) for _ in range(n - n // 2)]
    x = np.stack([p.music for p in pairs])
    y = np.stack([p.motion for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.float32)
    return x, y, labels


def sample_aligned_windows(corpus, n, window, rng):
    """Aligned (music, motion) windows without augmentation, for generator training."""
    x, y = [], []
    for _ in range(n):
        e = int(rng.integers(len(corpus)))
        t = int(rng.integers(corpus.lengths[e] - window + 1))
        x.append(corpus.features[e][t : t + window])
        y.append(corpus.motions[e][t : t + window])
    return np.stack(x), np.stack(y)


# --- synthetic beat-locked data --------------------------------------------

# Rest pose in pixels, roughly a front-facing upper body on a 512 canvas.
TEMPLATE = np.array(
    [
        [256, 120], [244, 108], [268, 108], [230, 114], [282, 114],
        [206, 180], [306, 180], [186, 250], [326, 250],
        [196, 300], [316, 300], [220, 330], [292, 330],
    ],
    dtype=np.float64,
)  # fmt: skip


def _click(sr, length=0.012):
    n = int(sr * length)
    t = np.arange(n) / sr
    return np.sin(2 * np.pi * 1500 * t) * np.exp(-t / (length / 4))


def _beat_phase(t, t0, period):
    return (t - t0) / period


def synth_audio(duration_s, bpm, t0, rng, sr=22050, accent=1.0, plain=0.55, noise=0.003):
    """Click train with every 4th click accented, plus low-level noise. Returns (samples, click_times)."""
    n = int(round(duration_s * sr))
    x = noise * rng.standard_normal(n)
    click = _click(sr)
    times = np.arange(t0, duration_s, 60.0 / bpm)
    for k, tc in enumerate(times):
        i = int(round(tc * sr))
        seg = click[: max(0, min(len(click), n - i))]
        x[i : i + len(seg)] += (accent if k % 4 == 0 else plain) * seg
    return np.clip(x, -1.0, 1.0), times


def synth_motion(duration_s, bpm, t0, fps, rng, accent=1.0, plain=0.6):
    """Conducting-like upper body locked to the beat grid.

    The right wrist drops to its lowest image point (largest y) exactly on each
    beat and rebounds, a cusp shaped ``(1 - |sin(pi * phase)|) ** 2``, so its
    vertical speed peaks sharply on the beat. Beat amplitude follows the accent pattern. Other
    joints follow smaller correlated oscillations.
    """
    n = int(round(duration_s * fps))
    t = np.arange(n) / fps
    period = 60.0 / bpm
    phase = _beat_phase(t, t0, period)
    beat_idx = np.floor(phase + 0.5).astype(int)
    amp = np.where(beat_idx % 4 == 0, accent, plain)
    bounce = (1.0 - np.abs(np.sin(np.pi * phase))) ** 2
    sway = np.sin(2 * np.pi * phase / 4.0)

    scale = rng.uniform(0.8, 1.2)
    offset = rng.uniform(-30, 30, size=2)
    frames = np.repeat(TEMPLATE[None], n, axis=0)
    big = 60.0
    frames[:, J["right_wrist"], 1] += big * amp * bounce - 30.0
    frames[:, J["right_wrist"], 0] += 15.0 * sway
    frames[:, J["right_elbow"], 1] += 0.5 * big * amp * bounce - 15.0
    frames[:, J["right_elbow"], 0] += 6.0 * sway
    frames[:, J["left_wrist"], 1] += 0.35 * big * amp * bounce - 20.0
    frames[:, J["left_elbow"], 1] += 0.15 * big * amp * bounce - 8.0
    head = 3.0 * amp * bounce
    for name in ("nose", "left_eye", "right_eye", "left_ear", "right_ear"):
        frames[:, J[name], 1] += head
    frames += 0.3 * rng.standard_normal(frames.shape)
    frames = frames * scale + offset
    return MotionSequence(frames, fps)


def make_synthetic_dataset(
    n_clips, duration_s, bpm_range=(80.0, 140.0), seed=0, out_dir=None, feature_cfg=None, val_fraction=0.2
):
    """Build paired click-train audio and beat-locked motion.

    Returns ``(audio, motions, manifest)`` where ``audio`` is a list of
    ``(Waveform, click_times, bpm)``. With ``out_dir`` set, features (.vcf),
    motion JSON, WAV audio and ``manifest.json`` are written there and the
    manifest paths are relative to it.
    """
    if duration_s < 10:
        raise InvalidInputError("synthetic clips must be at least 10 s long")
    cfg = feature_cfg or FeatureConfig()
    rng = np.random.default_rng(seed)
    audio, motions, entries = [], [], []
    for i in range(n_clips):
        bpm = float(rng.uniform(*bpm_range))
        t0 = float(rng.uniform(0.25, 0.25 + 60.0 / bpm))
        samples, clicks = synth_audio(duration_s, bpm, t0, rng, sr=cfg.sample_rate)
        w = Waveform(samples, cfg.sample_rate)
        m = synth_motion(duration_s, bpm, t0, cfg.motion_fps, rng)
        audio.append((w, clicks, bpm))
        motions.append(m)
        entry = {
            "audio_feature_path": f"clip_{i:03d}.vcf",
            "motion_path": f"clip_{i:03d}.motion.json",
            "audio_path": f"clip_{i:03d}.wav",
            "duration_s": float(duration_s),
            "bpm": bpm,
        }
        entries.append(entry)
        if out_dir is not None:
            from .audio_features import extract_features

            os.makedirs(out_dir, exist_ok=True)
            save_vcf(extract_features(w, cfg), os.path.join(out_dir, entry["audio_feature_path"]))
            save_motion(m, os.path.join(out_dir, entry["motion_path"]))
            save_audio(w, os.path.join(out_dir, entry["audio_path"]))
    n_val = int(round(n_clips * val_fraction)) if n_clips > 1 else 0
    split = {"train": list(range(n_clips - n_val)), "val": list(range(n_clips - n_val, n_clips))}
    manifest = DatasetManifest(entries, split, seed)
    if out_dir is not None:
        save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return audio, motions, manifest


def synthetic_corpus(n_clips, duration_s, bpm_range=(80.0, 140.0), seed=0, feature_cfg=None):
    """In-memory ``Corpus`` of the synthetic dataset plus its raw parts."""
    from .audio_features import extract_features

    cfg = feature_cfg or FeatureConfig()
    audio, motions, manifest = make_synthetic_dataset(n_clips, duration_s, bpm_range, seed, feature_cfg=cfg)
    feats = [extract_features(w, cfg) for w, _, _ in audio]
    corpus = Corpus(
        [f.frames for f in feats],
        [normalize_motion(m).frames for m in motions],
        cfg.motion_fps,
        [f.tempo_bpm for f in feats],
    )
    return corpus, audio, motions, manifest
