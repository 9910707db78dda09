"""Networks: music encoder, motion encoder, fuse layers (together the correspondence
net), generator and critic, plus the checkpoint container that carries them.

Tensors are batch-first ``(B, W, C)`` at the public boundary and transposed to
channels-first internally for the 1-D convolutions.
"""

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import CheckpointError, InputTooShortError, ShapeError

CKPT_MAGIC = b"VCKP"
CKPT_VERSION = 1
STAGES = ("amc", "generator")


@dataclass(frozen=True)
class ModelConfig:
    c_audio: int = 24
    c_motion: int = 26
    d_feat: int = 32
    n_layers: int = 4
    kernel: int = 5
    d_hidden: int = 64
    head_layers: int = 4
    critic_layers: int = 3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (isinstance(v, int) and v > 0):
                raise ValueError(f"ModelConfig.{k} must be a positive integer, got {v!r}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd so the time axis is preserved")

    @property
    def receptive_field(self):
        """Frames seen by one generator output frame (front-end plus head)."""
        return 1 + (self.n_layers + self.head_layers) * (self.kernel - 1)


class TemporalConvStack(nn.Module):
    """Stride-1 'same'-padded 1-D conv stack; leaky-ReLU between layers, linear last layer.

    ``center`` subtracts each window's per-channel time mean before the first
    layer. ``bounded`` squashes the output with tanh.
    """

    def __init__(self, c_in, c_hidden, c_out, n_layers, kernel, center=False, bounded=False):
        super().__init__()
        widths = [c_in] + [c_hidden] * (n_layers - 1) + [c_out]
        layers = []
        for i in range(n_layers):
            layers.append(nn.Conv1d(widths[i], widths[i + 1], kernel, padding=kernel // 2))
            if i < n_layers - 1:
                layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)
        self.c_in = c_in
        self.center = center
        self.bounded = bounded

    @property
    def final(self):
        return self.net[-1]

    def forward(self, x):
        # (B, W, C) -> (B, W, C_out)
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {x.shape[-1]}")
        if self.center:
            x = x - x.mean(dim=1, keepdim=True)
        out = self.net(x.transpose(1, 2)).transpose(1, 2)
        return torch.tanh(out) if self.bounded else out


def music_encoder(cfg):
    return TemporalConvStack(cfg.c_audio, cfg.d_feat, cfg.d_feat, cfg.n_layers, cfg.kernel, bounded=True)


def motion_encoder(cfg):
    # posture drift inside a window carries no timing information
    return TemporalConvStack(
        cfg.c_motion, cfg.d_feat, cfg.d_feat, cfg.n_layers, cfg.kernel, center=True, bounded=True
    )


class FuseLayers(nn.Module):
    """Per-frame fusion of the two feature streams, then temporal average pool.

    Features are concatenated frame by frame and passed through a pointwise
    perceptron, so the net can respond to music and motion events that
    coincide in time; the pooled result feeds one linear unit and a sigmoid.
    """

    def __init__(self, d_feat, d_hidden):
        super().__init__()
        self.frame_mlp = nn.Sequential(
            nn.Conv1d(2 * d_feat, d_hidden, 1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(d_hidden, d_hidden, 1),
            nn.LeakyReLU(0.2),
        )
        self.out = nn.Linear(d_hidden, 1)

    @property
    def final(self):
        return self.out

    def forward(self, fa, fm):
        h = self.frame_mlp(torch.cat([fa, fm], dim=2).transpose(1, 2))
        return torch.sigmoid(self.out(h.mean(dim=2))).squeeze(-1)


class Critic(nn.Module):
    def __init__(self, c_motion, d_hidden, n_layers, kernel):
        super().__init__()
        self.body = TemporalConvStack(c_motion, d_hidden, d_hidden, n_layers, kernel)
        self.act = nn.LeakyReLU(0.2)
        self.out = nn.Linear(d_hidden, 1)

    @property
    def final(self):
        return self.out

    def forward(self, y):
        return self.out(self.act(self.body(y)).mean(dim=1)).squeeze(-1)


class ModelBundle(nn.Module):
    """All parameter sets plus the config and the training stage they came from."""

    def __init__(self, config=None, stage="amc"):
        super().__init__()
        if stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        cfg = config or ModelConfig()
        self.config = cfg
        self.stage = stage
        self.music_encoder = music_encoder(cfg)
        self.motion_encoder = motion_encoder(cfg)
        self.fuse = FuseLayers(cfg.d_feat, cfg.d_hidden)
        self.generator_frontend = music_encoder(cfg)
        self.generator_head = TemporalConvStack(
            cfg.d_feat, cfg.d_hidden, cfg.c_motion, cfg.head_layers, cfg.kernel
        )
        self.critic = Critic(cfg.c_motion, cfg.d_hidden, cfg.critic_layers, cfg.kernel)

    def transfer_music_encoder(self):
        """Initialize the generator front-end from the trained music encoder."""
        self.generator_frontend.load_state_dict(copy.deepcopy(self.music_encoder.state_dict()))

    def amc_parameters(self):
        return [
            *self.music_encoder.parameters(),
            *self.motion_encoder.parameters(),
            *self.fuse.parameters(),
        ]

    def generator_parameters(self, finetune_frontend=True):
        params = list(self.generator_head.parameters())
        if finetune_frontend:
            params = list(self.generator_frontend.parameters()) + params
        return params


def _as_tensor(a, like=None):
    if isinstance(a, torch.Tensor):
        return a, False
    dtype = torch.float32
    if like is not None:
        dtype = next(like.parameters()).dtype
    return torch.as_tensor(np.asarray(a), dtype=dtype), True


def _batched(fn):
    """Let a forward op accept unbatched ``(W, C)`` and numpy inputs."""

    def wrapper(module, *arrays):
        tensors, squeeze, to_numpy = [], False, False
        for a in arrays:
            t, converted = _as_tensor(a, module)
            to_numpy |= converted
            if t.dim() == 2:
                t, squeeze = t.unsqueeze(0), True
            tensors.append(t)
        if to_numpy:
            with torch.no_grad():
                out = fn(module, *tensors)
        else:
            out = fn(module, *tensors)
        if squeeze:
            out = out[0]
        return out.detach().cpu().numpy() if to_numpy else out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _encoder(obj, name):
    return getattr(obj, name) if isinstance(obj, ModelBundle) else obj


@_batched
def encode_music(encoder, x):
    """``(B, W, C_audio)`` -> ``(B, W, d_feat)``."""
    return _encoder(encoder, "music_encoder")(x)


@_batched
def encode_motion(encoder, y):
    """``(B, W, 2J)`` -> ``(B, W, d_feat)``."""
    return _encoder(encoder, "motion_encoder")(y)


@_batched
def amc_forward(bundle, x, y):
    """Probability in (0, 1) that music window ``x`` and motion window ``y`` correspond."""
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"window lengths differ: music {x.shape[1]} vs motion {y.shape[1]}")
    return bundle.fuse(bundle.music_encoder(x), bundle.motion_encoder(y))


@_batched
def generate(bundle, x):
    """Music ``(B, T, C_audio)`` -> motion ``(B, T, 2J)``."""
    need = bundle.config.receptive_field
    if x.shape[1] < need:
        raise InputTooShortError(f"generator needs at least {need} frames, got {x.shape[1]}")
    return bundle.generator_head(bundle.generator_frontend(x))


@_batched
def critic(bundle, y):
    """Unbounded realism score per motion window, ``(B, W, 2J)`` -> ``(B,)``."""
    return _encoder(bundle, "critic")(y)


def pooled_motion_features(bundle, y):
    """Time-averaged motion-encoder features, numpy ``(B, d_feat)``."""
    t, _ = _as_tensor(y, bundle)
    if t.dim() == 2:
        t = t.unsqueeze(0)
    with torch.no_grad():
        return bundle.motion_encoder(t).mean(dim=1).cpu().numpy()


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(bundle, path, extra=None, state=None):
    """Write ``bundle`` with a JSON header; ``state`` holds extra tensors (optimizers, RNG)."""
    header = json.dumps(
        {
            "format_version": CKPT_VERSION,
            "config": asdict(bundle.config),
            "stage": bundle.stage,
            "extra": extra or {},
        }
    ).encode("utf-8")
    buf = io.BytesIO()
    torch.save({"model": bundle.state_dict(), "state": state or {}}, buf)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(buf.getvalue())


def read_checkpoint(path):
    """Return ``(bundle, header, state)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    payload = torch.load(io.BytesIO(data[12 + hlen :]), weights_only=False)
    bundle = ModelBundle(ModelConfig(**header["config"]), header["stage"])
    bundle.load_state_dict(payload["model"])
    bundle.eval()
    return bundle, header, payload["state"]


def load_checkpoint(path, stage=None):
    bundle, header, _ = read_checkpoint(path)
    if stage is not None and bundle.stage != stage:
        raise CheckpointError(f"{path}: expected a stage-{stage!r} checkpoint, got {bundle.stage!r}")
    return bundle
