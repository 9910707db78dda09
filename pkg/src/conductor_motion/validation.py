"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np

from .exceptions import InvalidInputError, ShapeError


def check_finite(a, name="array"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def check_waveform(samples, sample_rate, min_rate=8000):
    """Return ``samples`` as a finite 1-D float64 array, downmixing if needed.

    Multi-channel input of shape ``(n, channels)`` is averaged to mono.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.ndim != 1:
        raise ShapeError(f"waveform must be 1-D, got shape {samples.shape}")
    if int(sample_rate) != sample_rate or sample_rate < min_rate:
        raise InvalidInputError(f"sample_rate must be an integer >= {min_rate}, got {sample_rate}")
    return check_finite(samples, "waveform")


def check_feature_matrix(x, n_channels=None, name="features"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (frames x channels), got shape {x.shape}")
    if n_channels is not None and x.shape[1] != n_channels:
        raise ShapeError(f"{name} has {x.shape[1]} channels, expected {n_channels}")
    return check_finite(x, name)


def check_motion_array(m, n_joints=None, name="motion"):
    """Validate a ``T x J x 2`` keypoint array."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 3 or m.shape[2] != 2:
        raise ShapeError(f"{name} must have shape (T, J, 2), got {m.shape}")
    if n_joints is not None and m.shape[1] != n_joints:
        raise ShapeError(f"{name} has {m.shape[1]} joints, expected {n_joints}")
    return check_finite(m, name)


def check_odd_window(window):
    if int(window) != window or window < 1 or window % 2 == 0:
        raise InvalidInputError(f"window must be an odd integer >= 1, got {window}")
    return int(window)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
