"""Music-driven conductor motion: audio features, correspondence learning,
adversarial-perceptual motion generation and skeleton rendering."""

__version__ = "0.1.0"

from .audio_features import (
    AudioFeatureSequence,
    FeatureConfig,
    Waveform,
    extract_features,
    load_audio,
    load_vcf,
    save_vcf,
)
from .config import RunConfig, load_config
from .estimators import AudioFeatureExtractor, CorrespondenceNet, MotionGenerator
from .exceptions import ConductorError
from .inference import (
    InferenceConfig,
    export_for_pose_transfer,
    generate_motion,
    render_skeleton,
    smooth_motion,
    sync_score,
)
from .models import ModelBundle, ModelConfig, load_checkpoint, save_checkpoint
from .motion_data import (
    Corpus,
    DatasetManifest,
    MotionSequence,
    ingest_pose_json,
    load_motion,
    make_synthetic_dataset,
    normalize_motion,
    save_motion,
)
from .training import AmcTrainConfig, GenTrainConfig, train_amc, train_generator

__all__ = [
    "AmcTrainConfig",
    "AudioFeatureExtractor",
    "AudioFeatureSequence",
    "ConductorError",
    "Corpus",
    "CorrespondenceNet",
    "DatasetManifest",
    "FeatureConfig",
    "GenTrainConfig",
    "InferenceConfig",
    "ModelBundle",
    "ModelConfig",
    "MotionGenerator",
    "MotionSequence",
    "RunConfig",
    "Waveform",
    "export_for_pose_transfer",
    "extract_features",
    "generate_motion",
    "ingest_pose_json",
    "load_audio",
    "load_checkpoint",
    "load_config",
    "load_motion",
    "load_vcf",
    "make_synthetic_dataset",
    "normalize_motion",
    "render_skeleton",
    "save_checkpoint",
    "save_motion",
    "save_vcf",
    "smooth_motion",
    "sync_score",
    "train_amc",
    "train_generator",
]
