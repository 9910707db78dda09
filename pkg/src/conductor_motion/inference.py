"""Audio in, conductor motion out: chunked generation, smoothing, skeleton
rendering, synchronization scoring and keypoint export for pose transfer."""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import uniform_filter1d

from .audio_features import AudioFeatureSequence, FeatureConfig, Waveform, extract_features, load_audio
from .exceptions import InputTooShortError, InvalidInputError
from .models import amc_forward, generate
from .motion_data import (
    BONES,
    COCO_JOINTS,
    J,
    JOINTS,
    N_JOINTS,
    MotionSequence,
    normalize_motion,
    shoulder_widths,
)
from .validation import check_odd_window


@dataclass(frozen=True)
class InferenceConfig:
    window: int = 60
    overlap: float = 0.5
    smooth_window: int = 5
    canvas: tuple = (512, 512)

    def __post_init__(self):
        object.__setattr__(self, "canvas", tuple(int(v) for v in self.canvas))
        if not 0 <= self.overlap < 1:
            raise InvalidInputError("overlap must be in [0, 1)")
        check_odd_window(self.smooth_window)


def canvas_transform(canvas=(512, 512)):
    """Fixed similarity mapping normalized coordinates (neck origin, unit shoulders) to pixels."""
    w, h = canvas
    return 0.2 * min(w, h), np.array([0.5 * w, 0.35 * h])


def to_canvas(frames, canvas=(512, 512)):
    scale, offset = canvas_transform(canvas)
    return frames * scale + offset


def chunk_starts(n, window, overlap=0.5):
    hop = max(1, int(round(window * (1 - overlap))))
    starts = list(range(0, n - window + 1, hop))
    if starts[-1] != n - window:
        starts.append(n - window)
    return starts


def blend_chunks(chunks, starts, n):
    """Overlap-add chunks with a linear cross-fade across each overlap.

    Over an overlap of ``L`` frames the incoming chunk's weight is ``k / L`` at
    offset ``k``, so the middle frame is an even mix of both chunks.
    """
    out = np.zeros((n,) + chunks[0].shape[1:])
    w = len(chunks[0])
    out[: w] = chunks[0]
    end = w
    for chunk, s in zip(chunks[1:], starts[1:]):
        overlap = end - s
        if overlap > 0:
            alpha = (np.arange(overlap) / overlap).reshape(-1, *([1] * (chunk.ndim - 1)))
            out[s:end] = (1 - alpha) * out[s:end] + alpha * chunk[:overlap]
            out[end : s + w] = chunk[overlap:]
        else:
            out[s : s + w] = chunk
        end = s + w
    return out


def generate_normalized(bundle, features, window=60, overlap=0.5):
    """Generate ``T x 2J`` normalized motion for a ``T x C`` feature matrix."""
    features = np.asarray(features, dtype=np.float32)
    n = len(features)
    if n < window:
        raise InputTooShortError(f"need at least {window} feature frames, got {n}")
    starts = chunk_starts(n, window, overlap)
    batch = np.stack([features[s : s + window] for s in starts])
    with torch.no_grad():
        chunks = generate(bundle, torch.from_numpy(batch)).numpy()
    return blend_chunks(list(chunks), starts, n)


def generate_motion(audio, bundle, cfg=None, feature_cfg=None):
    """Turn an audio file, ``Waveform`` or feature sequence into canvas-space motion."""
    cfg = cfg or InferenceConfig()
    if bundle.stage != "generator":
        raise InvalidInputError(f"need a stage-'generator' bundle, got {bundle.stage!r}")
    if isinstance(audio, AudioFeatureSequence):
        feats = audio
    else:
        fcfg = feature_cfg or FeatureConfig()
        w = audio if isinstance(audio, Waveform) else load_audio(audio, fcfg.sample_rate)
        feats = extract_features(w, fcfg)
    flat = generate_normalized(bundle, feats.frames, cfg.window, cfg.overlap)
    frames = to_canvas(flat.reshape(len(flat), N_JOINTS, 2), cfg.canvas)
    return MotionSequence(frames, feats.fps)


def smooth_motion(m, window=5):
    """Centered moving average per joint and axis, edges replicated."""
    window = check_odd_window(window)
    if window == 1:
        return MotionSequence(m.frames.copy(), m.fps, list(m.joint_names))
    smoothed = uniform_filter1d(m.frames, size=window, axis=0, mode="nearest")
    return MotionSequence(smoothed, m.fps, list(m.joint_names))


# --- rendering -------------------------------------------------------------

JOINT_COLORS = {
    "nose": (255, 255, 255),
    "left_eye": (200, 200, 255),
    "right_eye": (255, 200, 200),
    "left_ear": (150, 150, 255),
    "right_ear": (255, 150, 150),
    "left_shoulder": (0, 170, 255),
    "right_shoulder": (255, 85, 0),
    "left_elbow": (0, 255, 170),
    "right_elbow": (255, 170, 0),
    "left_wrist": (0, 255, 0),
    "right_wrist": (255, 0, 0),
    "left_hip": (0, 85, 255),
    "right_hip": (255, 0, 170),
}
BONE_COLOR = (120, 120, 120)
BACKGROUND = (20, 20, 30)
JOINT_RADIUS = 5


def fit_to_canvas(frames, canvas=(512, 512), fill=0.9):
    """Uniform scale and shift placing the whole sequence's bounding box inside
    ``fill`` of the canvas, centered. Returns projected frames."""
    w, h = canvas
    lo = frames.reshape(-1, 2).min(axis=0)
    hi = frames.reshape(-1, 2).max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    scale = min(fill * w / span[0], fill * h / span[1])
    center = 0.5 * (lo + hi)
    return (frames - center) * scale + np.array([w / 2, h / 2])


def _draw_frame(points, canvas):
    from PIL import Image, ImageDraw

    img = Image.new("RGB", canvas, BACKGROUND)
    draw = ImageDraw.Draw(img)
    for a, b in BONES:
        pa, pb = points[J[a]], points[J[b]]
        draw.line([tuple(pa), tuple(pb)], fill=BONE_COLOR, width=3)
    r = JOINT_RADIUS
    for name in JOINTS:
        x, y = points[J[name]]
        draw.ellipse([x - r, y - r, x + r, y + r], fill=JOINT_COLORS[name])
    return img


def frame_path(out_dir, i):
    return os.path.join(out_dir, f"frame_{i:06d}.png")


def render_skeleton(m, out_dir, canvas=(512, 512), workers=1):
    """Write one PNG per frame; returns the list of paths in frame order."""
    canvas = tuple(int(v) for v in canvas)
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    projected = fit_to_canvas(m.frames, canvas)
    paths = [frame_path(out_dir, i) for i in range(len(m))]

    def work(i):
        _draw_frame(np.round(projected[i]).astype(int), canvas).save(paths[i], format="PNG")

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, range(len(m))))
    else:
        for i in range(len(m)):
            work(i)
    return paths


def mux_video(frame_dir, fps, out_path):
    """Encode rendered frames with ffmpeg if it is on PATH; returns False otherwise."""
    import shutil
    import subprocess

    exe = shutil.which("ffmpeg")
    if exe is None:
        return False
    subprocess.run(
        [exe, "-y", "-loglevel", "error", "-framerate", str(fps), "-i",
         os.path.join(frame_dir, "frame_%06d.png"), "-pix_fmt", "yuv420p", out_path],
        check=True,
    )  # fmt: skip
    return True


# --- evaluation ------------------------------------------------------------


def window_starts(n, window, stride):
    if n < window:
        raise InputTooShortError(f"sequence of {n} frames is shorter than window {window}")
    return np.arange(0, n - window + 1, stride)


def sync_score(features, motion, bundle, window=60, stride=30):
    """Average correspondence probability over aligned sliding windows.

    ``features`` is a ``T x C`` matrix or ``AudioFeatureSequence``; ``motion`` a
    ``MotionSequence`` in any coordinates (it is normalized here) or an already
    normalized ``T x 2J`` array. Returns ``(mean, per_window)``.
    """
    if bundle.stage != "amc":
        raise InvalidInputError(f"need a stage-'amc' bundle, got {bundle.stage!r}")
    feats = features.frames if isinstance(features, AudioFeatureSequence) else np.asarray(features)
    if isinstance(motion, MotionSequence):
        flat = normalize_motion(motion).flat()
    else:
        flat = np.asarray(motion).reshape(len(motion), -1)
    n = min(len(feats), len(flat))
    starts = window_starts(n, window, stride)
    x = np.stack([feats[s : s + window] for s in starts]).astype(np.float32)
    y = np.stack([flat[s : s + window] for s in starts]).astype(np.float32)
    with torch.no_grad():
        p = amc_forward(bundle, torch.from_numpy(x), torch.from_numpy(y)).numpy()
    return float(p.mean()), p


# --- export ----------------------------------------------------------------

POSE_EXPORT_VERSION = 1


def standing_legs(frames):
    """Fixed knee and ankle positions under the sequence's median hips."""
    lhip = np.median(frames[:, J["left_hip"]], axis=0)
    rhip = np.median(frames[:, J["right_hip"]], axis=0)
    width = np.median(shoulder_widths(frames))
    down = np.array([0.0, 1.0]) * width
    return {
        "left_knee": lhip + 1.1 * down,
        "right_knee": rhip + 1.1 * down,
        "left_ankle": lhip + 2.2 * down,
        "right_ankle": rhip + 2.2 * down,
    }


def export_for_pose_transfer(m, out_file):
    """Write COCO-17 keypoints per frame as JSON; legs come from a standing template."""
    legs = standing_legs(m.frames)
    frames = []
    for f in m.frames:
        kps = [[float(f"{v:.9g}") for v in f[j]] + [1.0] for j in range(N_JOINTS)]
        kps += [[float(f"{v:.9g}") for v in legs[name]] + [1.0] for name in COCO_JOINTS[N_JOINTS:]]
        frames.append(kps)
    doc = {
        "version": POSE_EXPORT_VERSION,
        "format": "coco17",
        "fps": float(m.fps),
        "keypoint_names": COCO_JOINTS,
        "frames": frames,
    }
    with open(out_file, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
    return out_file
