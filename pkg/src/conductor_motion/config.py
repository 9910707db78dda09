"""Run configuration: one YAML document with optional sections.

```yaml
features:  {sample_rate, n_fft, hop, n_mels, n_mfcc, motion_fps, tempo_range, tempogram_window}
model:     {d_feat, n_layers, kernel, d_hidden, head_layers, critic_layers}
amc:       {batch, lr, iterations, window, seed, scale_range}
gen:       {batch, lambda_mse, lambda_per, lambda_adv, n_critic, gp_weight, lr_g, lr_d,
            iterations, window, seed, finetune_frontend}
inference: {window, overlap, smooth_window, canvas}
run:       {checkpoint_every}
```

Every key is optional; unknown sections or keys are rejected. The
environment variable ``VC_SEED`` overrides both training seeds.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .audio_features import FeatureConfig
from .exceptions import ConfigError
from .inference import InferenceConfig
from .models import ModelConfig
from .training import AmcTrainConfig, GenTrainConfig


@dataclass(frozen=True)
class RunOptions:
    checkpoint_every: int = 100


SECTIONS = {
    "features": FeatureConfig,
    "model": ModelConfig,
    "amc": AmcTrainConfig,
    "gen": GenTrainConfig,
    "inference": InferenceConfig,
    "run": RunOptions,
}


@dataclass(frozen=True)
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    amc: AmcTrainConfig = field(default_factory=AmcTrainConfig)
    gen: GenTrainConfig = field(default_factory=GenTrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    run: RunOptions = field(default_factory=RunOptions)

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def with_channels(self, c_audio, c_motion):
        return replace(self, model=replace(self.model, c_audio=c_audio, c_motion=c_motion))


def parse_config(data, env=None):
    """Validate a nested mapping into a ``RunConfig``."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        try:
            built[name] = cls(**section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name!r} section: {exc}") from None
    cfg = RunConfig(**built)
    seed = (env if env is not None else os.environ).get("VC_SEED")
    if seed not in (None, ""):
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigError(f"VC_SEED must be an integer, got {seed!r}") from None
        cfg = replace(cfg, amc=replace(cfg.amc, seed=seed), gen=replace(cfg.gen, seed=seed))
    return cfg


def load_config(path=None, env=None):
    if path is None:
        return parse_config({}, env)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, env)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
