"""scikit-learn style wrappers around the functional pipeline.

``AudioFeatureExtractor`` is a stateless transformer; ``CorrespondenceNet`` and
``MotionGenerator`` are estimators fitted on lists of per-clip arrays (feature
matrices ``T x C`` and normalized motion ``T x 2J``).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio_features import FeatureConfig, Waveform, extract_features, load_audio
from .exceptions import InvalidInputError, ShapeError
from .inference import generate_normalized, sync_score
from .models import ModelBundle, ModelConfig, amc_forward, pooled_motion_features
from .motion_data import Corpus
from .training import AmcTrainConfig, GenTrainConfig, train_amc, train_generator
from .validation import check_feature_matrix, check_random_state


def _seed(random_state):
    """Integer training seed from an int, None or Generator."""
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).integers(2**31))


def _corpus(features, motions, fps):
    if len(features) != len(motions):
        raise ShapeError(f"{len(features)} feature matrices vs {len(motions)} motion arrays")
    if not features:
        raise InvalidInputError("need at least one clip")
    feats = [check_feature_matrix(f) for f in features]
    mots = [np.asarray(m, dtype=np.float32).reshape(len(m), -1) for m in motions]
    return Corpus(feats, mots, fps)


class AudioFeatureExtractor(TransformerMixin, BaseEstimator):
    """Map waveforms (or WAV paths) to ``T x C`` standardized feature matrices."""

    def __init__(self, sample_rate=22050, n_fft=2048, hop=512, n_mels=64, n_mfcc=20, motion_fps=30.0):
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.hop = hop
        self.n_mels = n_mels
        self.n_mfcc = n_mfcc
        self.motion_fps = motion_fps

    def _config(self):
        return FeatureConfig(**self.get_params())

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.n_features_out_ = self.n_mfcc + 4
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        out = []
        for item in X:
            if isinstance(item, str):
                item = load_audio(item, self.sample_rate)
            elif not isinstance(item, Waveform):
                item = Waveform(np.asarray(item, dtype=np.float64), self.sample_rate)
            out.append(extract_features(item, self.config_).frames)
        return out


class CorrespondenceNet(ClassifierMixin, BaseEstimator):
    """Stage-one net scoring whether a music window and a motion window are aligned.

    ``fit(features, motions)`` takes per-clip lists. Prediction takes paired
    windows ``X_music (N, W, C)`` and ``Y_motion (N, W, 2J)``.
    """

    def __init__(
        self,
        d_feat=32,
        n_layers=4,
        kernel=5,
        d_hidden=64,
        batch=32,
        lr=1e-3,
        iterations=2000,
        window=60,
        scale_range=(0.8, 1.2),
        fps=30.0,
        random_state=0,
    ):
        self.d_feat = d_feat
        self.n_layers = n_layers
        self.kernel = kernel
        self.d_hidden = d_hidden
        self.batch = batch
        self.lr = lr
        self.iterations = iterations
        self.window = window
        self.scale_range = scale_range
        self.fps = fps
        self.random_state = random_state

    def fit(self, features, motions):
        corpus = _corpus(features, motions, self.fps)
        model_cfg = ModelConfig(
            c_audio=corpus.features[0].shape[1],
            c_motion=corpus.motions[0].shape[1],
            d_feat=self.d_feat,
            n_layers=self.n_layers,
            kernel=self.kernel,
            d_hidden=self.d_hidden,
        )
        cfg = AmcTrainConfig(
            batch=self.batch,
            lr=self.lr,
            iterations=self.iterations,
            window=self.window,
            seed=_seed(self.random_state),
            scale_range=self.scale_range,
        )
        self.bundle_, self.history_ = train_amc(corpus, model_cfg, cfg)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X_music, Y_motion):
        check_is_fitted(self, "bundle_")
        p = np.asarray(amc_forward(self.bundle_, np.asarray(X_music), np.asarray(Y_motion)))
        p = np.atleast_1d(p)
        return np.stack([1 - p, p], axis=1)

    def predict(self, X_music, Y_motion):
        return (self.predict_proba(X_music, Y_motion)[:, 1] > 0.5).astype(int)

    def score(self, X_music, Y_motion, labels):
        return float(np.mean(self.predict(X_music, Y_motion) == np.asarray(labels).astype(int)))

    def transform_motion(self, Y_motion):
        """Time-pooled motion-encoder features, ``(N, d_feat)``."""
        check_is_fitted(self, "bundle_")
        return pooled_motion_features(self.bundle_, np.asarray(Y_motion, dtype=np.float32))

    def sync_score(self, features, motion, stride=30):
        check_is_fitted(self, "bundle_")
        return sync_score(features, motion, self.bundle_, self.window, stride)


class MotionGenerator(RegressorMixin, BaseEstimator):
    """Stage-two generator; needs a fitted ``CorrespondenceNet`` or stage-'amc' bundle."""

    def __init__(
        self,
        correspondence=None,
        batch=32,
        lambda_mse=1.0,
        lambda_per=0.1,
        lambda_adv=0.01,
        n_critic=5,
        gp_weight=10.0,
        lr_g=1e-4,
        lr_d=1e-4,
        iterations=1000,
        window=60,
        overlap=0.5,
        finetune_frontend=True,
        fps=30.0,
        random_state=0,
    ):
        self.correspondence = correspondence
        self.batch = batch
        self.lambda_mse = lambda_mse
        self.lambda_per = lambda_per
        self.lambda_adv = lambda_adv
        self.n_critic = n_critic
        self.gp_weight = gp_weight
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.iterations = iterations
        self.window = window
        self.overlap = overlap
        self.finetune_frontend = finetune_frontend
        self.fps = fps
        self.random_state = random_state

    def _amc_bundle(self):
        amc = self.correspondence
        if isinstance(amc, CorrespondenceNet):
            check_is_fitted(amc, "bundle_")
            return amc.bundle_
        if isinstance(amc, ModelBundle):
            return amc
        raise InvalidInputError("correspondence must be a fitted CorrespondenceNet or a ModelBundle")

    def fit(self, features, motions):
        corpus = _corpus(features, motions, self.fps)
        cfg = GenTrainConfig(
            batch=self.batch,
            lambda_mse=self.lambda_mse,
            lambda_per=self.lambda_per,
            lambda_adv=self.lambda_adv,
            n_critic=self.n_critic,
            gp_weight=self.gp_weight,
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            iterations=self.iterations,
            window=self.window,
            seed=_seed(self.random_state),
            finetune_frontend=self.finetune_frontend,
        )
        self.bundle_, self.history_ = train_generator(corpus, self._amc_bundle(), cfg)
        return self

    def predict(self, features):
        """Normalized ``T x 2J`` motion for one ``T x C`` feature matrix."""
        check_is_fitted(self, "bundle_")
        return generate_normalized(self.bundle_, check_feature_matrix(features), self.window, self.overlap)

    def score(self, features, motion):
        """Negative frame MSE against reference normalized motion (higher is better)."""
        pred = self.predict(features)
        ref = np.asarray(motion).reshape(len(motion), -1)
        n = min(len(pred), len(ref))
        return -float(np.mean((pred[:n] - ref[:n]) ** 2))
