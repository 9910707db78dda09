"""Music feature extraction on an STFT grid, aligned to the motion frame rate.

The feature stack per motion frame is ``n_mfcc`` MFCCs followed by four scalar
tracks: spectral centroid, spectral bandwidth, onset envelope and predominant
local pulse (PLP). A global tempo estimate travels alongside as metadata.

All functions are pure numpy; nothing here holds state.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dct

from .exceptions import FormatError, InputTooShortError, InvalidInputError
from .validation import check_waveform

EPS = 1e-10
LOG_FLOOR = 1e-6
VAR_FLOOR = 1e-8

VCF_MAGIC = b"VCFT"
VCF_VERSION = 1


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", check_waveform(self.samples, self.sample_rate))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 64
    n_mfcc: int = 20
    motion_fps: float = 30.0
    tempo_range: tuple = (40.0, 208.0)
    # PLP / tempogram analysis window, in seconds
    tempogram_window: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "tempo_range", tuple(float(v) for v in self.tempo_range))
        if self.hop <= 0 or self.n_fft <= 0 or self.hop > self.n_fft:
            raise InvalidInputError("need 0 < hop <= n_fft")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise InvalidInputError("need 0 < n_mfcc <= n_mels")
        if self.motion_fps <= 0:
            raise InvalidInputError("motion_fps must be positive")
        lo, hi = self.tempo_range
        if not 0 < lo < hi:
            raise InvalidInputError("tempo_range must satisfy 0 < min_bpm < max_bpm")

    @property
    def frame_rate(self):
        """STFT frames per second."""
        return self.sample_rate / self.hop

    def to_dict(self):
        d = asdict(self)
        d["tempo_range"] = list(self.tempo_range)
        return d


@dataclass
class AudioFeatureSequence:
    frames: np.ndarray
    fps: float
    tempo_bpm: float
    channel_names: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or len(self.channel_names) != self.frames.shape[1]:
            raise InvalidInputError("frames must be T x C with one name per channel")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("feature frames contain non-finite values")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def n_channels(self):
        return self.frames.shape[1]

    def channel(self, name):
        return self.frames[:, self.channel_names.index(name)]


def channel_names(cfg):
    return [f"mfcc_{i}" for i in range(cfg.n_mfcc)] + ["centroid", "bandwidth", "onset", "plp"]


def _as_samples(w):
    return w.samples if isinstance(w, Waveform) else check_waveform(w, 8000)


def n_frames(length, n_fft, hop):
    """Number of full analysis frames (no padding)."""
    if length < n_fft:
        return 0
    return 1 + (length - n_fft) // hop


def frame_signal(samples, n_fft, hop):
    if len(samples) < n_fft:
        raise InputTooShortError(f"waveform has {len(samples)} samples, need at least n_fft={n_fft}")
    count = n_frames(len(samples), n_fft, hop)
    frames = np.lib.stride_tricks.sliding_window_view(samples, n_fft)[::hop]
    return frames[:count]


def magnitude_spectrogram(w, cfg):
    """Hann-windowed magnitude STFT, shape ``T' x (n_fft // 2 + 1)``."""
    frames = frame_signal(_as_samples(w), cfg.n_fft, cfg.hop)
    window = np.hanning(cfg.n_fft + 1)[:-1]
    return np.abs(np.fft.rfft(frames * window, axis=1))


def fft_frequencies(cfg):
    return np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular filters on the HTK mel scale from 0 Hz to Nyquist, ``n_mels x n_bins``."""
    freqs = fft_frequencies(cfg)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_spectrogram(w, cfg, mag=None):
    if mag is None:
        mag = magnitude_spectrogram(w, cfg)
    return np.log(mag @ mel_filterbank(cfg).T + LOG_FLOOR)


def mfcc(w, cfg, mag=None):
    """Type-II orthonormal DCT of the log-mel spectrogram, first ``n_mfcc`` coefficients."""
    logmel = log_mel_spectrogram(w, cfg, mag)
    return dct(logmel, type=2, norm="ortho", axis=1)[:, : cfg.n_mfcc]


def spectral_centroid(w, cfg, mag=None):
    if mag is None:
        mag = magnitude_spectrogram(w, cfg)
    total = mag.sum(axis=1)
    freqs = fft_frequencies(cfg)
    out = np.zeros(mag.shape[0])
    ok = total >= EPS
    out[ok] = (mag[ok] @ freqs) / total[ok]
    return out


def spectral_bandwidth(w, cfg, mag=None):
    if mag is None:
        mag = magnitude_spectrogram(w, cfg)
    total = mag.sum(axis=1)
    freqs = fft_frequencies(cfg)
    centroid = spectral_centroid(w, cfg, mag)
    out = np.zeros(mag.shape[0])
    ok = total >= EPS
    dev = (freqs[None, :] - centroid[ok, None]) ** 2
    out[ok] = np.sqrt((dev * mag[ok]).sum(axis=1) / total[ok])
    return out


def onset_envelope(w, cfg, mag=None):
    """Half-wave rectified frame difference of the log-mel spectrogram, summed over bands.

    The first frame has no predecessor and is 0.
    """
    logmel = log_mel_spectrogram(w, cfg, mag)
    flux = np.maximum(0.0, np.diff(logmel, axis=0)).sum(axis=1)
    return np.concatenate([[0.0], flux])


def fourier_tempogram(onset, cfg, bpms=None):
    """Local Fourier coefficients of the onset envelope.

    Returns ``(coefs, bpms, win_len)`` where ``coefs`` is ``T' x len(bpms)``
    complex and each row is computed over a Hann window centered on that frame.
    """
    onset = np.asarray(onset, dtype=np.float64)
    fr = cfg.frame_rate
    if bpms is None:
        lo, hi = cfg.tempo_range
        bpms = np.arange(lo, hi + 0.25, 0.5)
    win_len = int(round(cfg.tempogram_window * fr)) // 2 * 2 + 1
    half = win_len // 2
    centered = onset - onset.mean()
    padded = np.pad(centered, half)
    segments = np.lib.stride_tricks.sliding_window_view(padded, win_len)
    n = np.arange(win_len) - half
    window = np.hanning(win_len + 2)[1:-1]
    basis = window[:, None] * np.exp(-2j * np.pi * np.outer(n, bpms / 60.0) / fr)
    return segments @ basis, bpms, win_len


def onset_autocorrelation(onset):
    """Biased autocorrelation of the mean-removed onset envelope, normalized to lag 0."""
    centered = onset - onset.mean()
    n = len(centered)
    spec = np.fft.rfft(centered, 2 * n)
    ac = np.fft.irfft(np.abs(spec) ** 2)[:n]
    return ac / ac[0] if ac[0] > 0 else ac


def tempo_strength(onset, cfg):
    """Tempo salience over a BPM grid: tempogram magnitude times autocorrelation.

    The Fourier tempogram alone cannot tell a tempo from its double (an impulse
    train has equal energy at every harmonic); the autocorrelation alone cannot
    tell it from its half. Their product peaks at the true tempo only.
    Returns ``(bpms, strength, coefs, win_len)``.
    """
    coefs, bpms, win_len = fourier_tempogram(onset, cfg)
    spectral = np.abs(coefs).mean(axis=0)
    spectral = spectral / spectral.max()
    ac = onset_autocorrelation(onset)
    lags = 60.0 * cfg.frame_rate / bpms
    periodic = np.clip(np.interp(lags, np.arange(len(ac)), ac, right=0.0), 0.0, None)
    return bpms, spectral * periodic, coefs, win_len


def tempo_and_plp(onset, cfg, local_band=1.2):
    """Global tempo (BPM) and predominant local pulse curve for an onset envelope.

    Tempo is the argmax of ``tempo_strength`` inside ``cfg.tempo_range``. The
    PLP curve overlap-adds, for every frame, a unit-amplitude windowed cosine at
    that frame's dominant tempo and phase, then half-wave rectifies and scales
    to a peak of 1. Local tempi are searched within a factor ``local_band`` of
    the global tempo so harmonics cannot take over. An all-zero envelope yields
    ``(0.0, zeros)``.
    """
    onset = np.asarray(onset, dtype=np.float64)
    if np.any(onset < 0):
        raise InvalidInputError("onset envelope must be nonnegative")
    if not np.any(onset > 0) or np.ptp(onset) == 0:
        return 0.0, np.zeros_like(onset)

    bpms, strength, coefs, win_len = tempo_strength(onset, cfg)
    if not np.any(strength > 0):
        return 0.0, np.zeros_like(onset)
    # the product picks the octave; the tempogram alone then places the peak
    coarse = bpms[np.argmax(strength)]
    spectral = np.abs(coefs).mean(axis=0)
    near = np.abs(bpms - coarse) <= 0.08 * coarse
    k = int(np.flatnonzero(near)[np.argmax(spectral[near])])
    tempo = float(bpms[k])
    if 0 < k < len(bpms) - 1:
        a, b, c = spectral[k - 1 : k + 2]
        denom = a - 2 * b + c
        if denom < 0:
            tempo += 0.5 * (a - c) / denom * (bpms[1] - bpms[0])

    band = (bpms >= tempo / local_band) & (bpms <= tempo * local_band)
    mag = np.where(band[None, :], np.abs(coefs), -1.0)
    half = win_len // 2
    n = np.arange(win_len) - half
    window = np.hanning(win_len + 2)[1:-1]
    best = np.argmax(mag, axis=1)
    rows = np.arange(len(onset))
    omega = 2 * np.pi * bpms[best] / 60.0 / cfg.frame_rate
    phase = np.angle(coefs[rows, best])
    # kernels[t, k] lands on frame t + n[k]
    kernels = window[None, :] * np.cos(omega[:, None] * n[None, :] + phase[:, None])
    acc = np.zeros(len(onset) + 2 * half)
    for t in range(len(onset)):
        acc[t : t + win_len] += kernels[t]
    plp = np.maximum(0.0, acc[half : half + len(onset)])
    peak = plp.max()
    if peak > 0:
        plp = plp / peak
    return tempo, plp


def frame_times(n, cfg):
    """Center time in seconds of each STFT frame."""
    return (np.arange(n) * cfg.hop + cfg.n_fft / 2) / cfg.sample_rate


def arrival_times(n, cfg):
    """Time in seconds of the newest hop of samples in each STFT frame.

    Log-domain flux fires when energy first enters the window, so onset and
    PLP tracks are stamped here rather than at the frame center.
    """
    return (np.arange(n) * cfg.hop + cfg.n_fft - cfg.hop / 2) / cfg.sample_rate


def onset_frame(t_seconds, cfg):
    """Index of the first STFT frame whose window contains time ``t_seconds``."""
    sample = int(round(t_seconds * cfg.sample_rate))
    return max(0, (sample - cfg.n_fft) // cfg.hop + 1)


def resample_track(values, src_times, n_out, fps):
    """Linear interpolation onto ``n_out`` frames at ``fps``; ends held constant."""
    dst = np.arange(n_out) / fps
    return np.interp(dst, src_times, values)


def standardize(frames):
    mean = frames.mean(axis=0)
    std = np.sqrt(np.maximum(frames.var(axis=0), VAR_FLOOR))
    return (frames - mean) / std


def extract_features(w, cfg=None):
    """Compute the full feature stack for ``w`` and resample it to ``cfg.motion_fps``."""
    cfg = cfg or FeatureConfig()
    if not isinstance(w, Waveform):
        w = Waveform(w, cfg.sample_rate)
    if w.sample_rate != cfg.sample_rate:
        raise InvalidInputError(f"waveform rate {w.sample_rate} != configured {cfg.sample_rate}")
    mag = magnitude_spectrogram(w, cfg)
    onset = onset_envelope(w, cfg, mag)
    tempo, plp = tempo_and_plp(onset, cfg)
    spectral = np.column_stack(
        [mfcc(w, cfg, mag), spectral_centroid(w, cfg, mag), spectral_bandwidth(w, cfg, mag)]
    )
    n_out = max(1, int(round(w.duration * cfg.motion_fps)))
    centers = frame_times(len(onset), cfg)
    arrivals = arrival_times(len(onset), cfg)
    tracks = [resample_track(col, centers, n_out, cfg.motion_fps) for col in spectral.T]
    tracks += [resample_track(col, arrivals, n_out, cfg.motion_fps) for col in (onset, plp)]
    aligned = np.column_stack(tracks)
    return AudioFeatureSequence(
        frames=standardize(aligned),
        fps=float(cfg.motion_fps),
        tempo_bpm=tempo,
        channel_names=channel_names(cfg),
    )


def save_vcf(seq, path):
    """Write the binary ``.vcf`` feature container (float32 payload)."""
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    meta = json.dumps(
        {
            "channel_names": list(seq.channel_names),
            "fps": float(seq.fps),
            "tempo_bpm": float(seq.tempo_bpm),
            "shape": list(frames.shape),
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VCF_MAGIC)
        fh.write(struct.pack("<II", VCF_VERSION, len(meta)))
        fh.write(meta)
        fh.write(frames.tobytes())


def load_vcf(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != VCF_MAGIC:
        raise FormatError(f"{path}: not a feature container (bad magic)")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != VCF_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    start = 12 + meta_len
    meta = json.loads(data[12:start].decode("utf-8"))
    t, c = meta["shape"]
    payload = np.frombuffer(data, dtype="<f4", offset=start)
    if payload.size != t * c:
        raise FormatError(f"{path}: payload holds {payload.size} values, header says {t * c}")
    return AudioFeatureSequence(
        frames=payload.reshape(t, c).astype(np.float32),
        fps=meta["fps"],
        tempo_bpm=meta["tempo_bpm"],
        channel_names=meta["channel_names"],
    )


def load_audio(path, sample_rate=22050):
    """Read a WAV file as a mono ``Waveform`` at ``sample_rate``."""
    from math import gcd

    from scipy.io import wavfile
    from scipy.signal import resample_poly

    rate, data = wavfile.read(path)
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        data = (data.astype(np.float64) - (info.max + info.min + 1) / 2) / ((info.max - info.min + 1) / 2)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != sample_rate:
        g = gcd(int(rate), int(sample_rate))
        data = resample_poly(data, sample_rate // g, rate // g)
    return Waveform(np.clip(data, -1.0, 1.0), sample_rate)


def save_audio(w, path):
    from scipy.io import wavfile

    wavfile.write(path, w.sample_rate, np.asarray(w.samples, dtype=np.float32))
