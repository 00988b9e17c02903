"""Audio front-end: resampling, segmentation, STFT, spectral subtraction, Mel features."""

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .wav import AudioClip

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class DSPConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 256
    window: str = "hann"
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0
    c1: float = 2595.0
    c2: float = 700.0
    alpha: float = 1.0
    noise_fraction: float = 0.1
    segment_s: float = 1.5
    segment_hop_s: float = 0.05

    def fingerprint(self):
        """Stable hash of the canonical JSON form; used for cache staleness checks."""
        canon = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def feature_shape(self):
        """(t, f) of every feature tensor this config produces."""
        seg = int(round(self.segment_s * self.sample_rate))
        return 1 + seg // self.hop, self.n_mels


@dataclass
class PowerSpectrogram:
    values: np.ndarray  # frames x (n_fft // 2 + 1)
    n_fft: int
    hop: int
    sample_rate: int
    window: str = "hann"

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def n_bins(self):
        return self.values.shape[1]


@dataclass
class NoiseProfile:
    values: np.ndarray
    frames_used: int


@dataclass
class MelFilterBank:
    filters: np.ndarray  # n_mels x bins
    center_frequencies: np.ndarray  # n_mels + 2 edges in Hz
    c1: float
    c2: float

    def response(self, freqs):
        """Evaluate every triangular filter at arbitrary frequencies (Hz)."""
        return _triangles(self.center_frequencies, np.asarray(freqs, dtype=np.float64))


@dataclass
class FeatureTensor:
    values: np.ndarray  # 2 x t x f
    mean: float
    std: float


# resampling / segmentation


def resample(clip, target_sr):
    """Linear-interpolation resampling that keeps the clip duration."""
    if target_sr <= 0:
        raise ConfigError(f"target sample rate must be positive, got {target_sr}")
    if clip.sample_rate == target_sr:
        return AudioClip(clip.samples.copy(), target_sr, clip.label, clip.source_path)
    n_in = len(clip.samples)
    n_out = int(round(n_in * target_sr / clip.sample_rate))
    src_pos = np.arange(n_out) * (clip.sample_rate / target_sr)
    out = np.interp(src_pos, np.arange(n_in), clip.samples)
    return AudioClip(out, target_sr, clip.label, clip.source_path)


def segment(clip, window_s=1.5, hop_s=0.05):
    """Cut a clip into fixed-length overlapping windows; short clips are zero-padded to one."""
    win = int(round(window_s * clip.sample_rate))
    hop = int(round(hop_s * clip.sample_rate))
    if win <= 0 or hop <= 0:
        raise ConfigError("segment window and hop must be positive")
    x = clip.samples
    if len(x) < win:
        x = np.concatenate([x, np.zeros(win - len(x), dtype=x.dtype)])
    count = (len(x) - win) // hop + 1
    return [
        AudioClip(x[k * hop : k * hop + win].copy(), clip.sample_rate, clip.label, clip.source_path)
        for k in range(count)
    ]


# spectra


def make_window(kind, n):
    if kind == "hann":
        # periodic Hann, the DFT-even form
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    if kind in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    raise ConfigError(f"unknown window {kind!r}")


def frame_signal(samples, n_fft, hop, center=True):
    """Split into ``n_fft``-long frames at ``hop`` spacing (zero-padded by n_fft/2 when centred)."""
    x = np.asarray(samples, dtype=np.float64)
    if center:
        x = np.pad(x, (n_fft // 2, n_fft // 2))
    if len(x) < n_fft:
        warnings.warn(f"signal of {len(x)} samples shorter than n_fft={n_fft}; zero-padding", stacklevel=3)
        x = np.pad(x, (0, n_fft - len(x)))
    count = (len(x) - n_fft) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:count]


def stft_power(clip, n_fft=1024, hop=256, window="hann", center=True):
    """|DFT|^2 of windowed frames, Hermitian half-spectrum (n_fft // 2 + 1 bins)."""
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ConfigError(f"hop must be in (0, n_fft], got {hop}")
    frames = frame_signal(clip.samples, n_fft, hop, center) * make_window(window, n_fft)
    spec = np.fft.rfft(frames, axis=1)
    values = spec.real**2 + spec.imag**2
    return PowerSpectrogram(values, n_fft, hop, clip.sample_rate, window)


def estimate_noise(spec, fraction=0.1):
    """Per-bin mean over the quietest ``ceil(fraction * frames)`` frames."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"noise fraction must be in (0, 1], got {fraction}")
    k = max(1, math.ceil(fraction * spec.n_frames))
    energy = spec.values.sum(axis=1)
    quiet = np.argsort(energy, kind="stable")[:k]
    return NoiseProfile(spec.values[quiet].mean(axis=0), k)


def spectral_subtract(spec, noise, alpha=1.0):
    """max(P_x - alpha * P_n, 0) per frame and bin."""
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    if noise.values.shape[-1] != spec.n_bins:
        raise DimensionError(f"noise profile has {noise.values.shape[-1]} bins, spectrogram {spec.n_bins}")
    cleaned = np.maximum(spec.values - alpha * noise.values, 0.0)
    return PowerSpectrogram(cleaned, spec.n_fft, spec.hop, spec.sample_rate, spec.window)


# Mel filterbank


def hz_to_mel(freq, c1=2595.0, c2=700.0):
    return c1 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / c2)


def mel_to_hz(mel, c1=2595.0, c2=700.0):
    return c2 * (10.0 ** (np.asarray(mel, dtype=np.float64) / c1) - 1.0)


def _triangles(edges, freqs):
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    f = freqs[None, :]
    rising = (f - lo) / (mid - lo)
    falling = (hi - f) / (hi - mid)
    out = np.where((f >= lo) & (f <= mid), rising, 0.0)
    return np.where((f > mid) & (f <= hi), falling, out)


def mel_filterbank(n_mels=64, n_fft=1024, sample_rate=16000, fmin=0.0, fmax=8000.0, c1=2595.0, c2=700.0):
    """Triangular filters with peaks equally spaced on the perceptual scale, sampled at FFT bins."""
    if n_mels < 2:
        raise ConfigError(f"n_mels must be >= 2, got {n_mels}")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ConfigError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got fmin={fmin}, fmax={fmax}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin, c1, c2), hz_to_mel(fmax, c1, c2), n_mels + 2), c1, c2)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    return MelFilterBank(_triangles(edges, bin_freqs), edges, c1, c2)


def log_mel(spec, fb):
    """Natural-log Mel energies, ``frames x n_mels``, floored at LOG_FLOOR."""
    if fb.filters.shape[1] != spec.n_bins:
        raise DimensionError(f"filterbank has {fb.filters.shape[1]} bins, spectrogram {spec.n_bins}")
    return np.log(spec.values @ fb.filters.T + LOG_FLOOR)


def make_input_tensor(mel):
    """Stack log-Mel and its temporal delta into ``2 x t x f``, standardised jointly."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] < 2:
        raise DimensionError(f"need a (t >= 2, f) Mel matrix, got shape {mel.shape}")
    delta = np.zeros_like(mel)
    delta[1:] = mel[1:] - mel[:-1]
    stacked = np.stack([mel, delta])
    mu = float(stacked.mean())
    sd = float(stacked.std())
    if sd < 1e-12:
        sd = 1.0
    return FeatureTensor((stacked - mu) / sd, mu, sd)


# full pipeline


def clip_features(clip, config=DSPConfig(), fb=None):
    """Resample, denoise, segment and featurise one clip.

    The noise profile comes from the whole clip; subtraction is applied to each
    segment's spectrogram. Returns a list of ``2 x t x f`` float32 arrays.
    """
    clip = resample(clip, config.sample_rate)
    if fb is None:
        fb = mel_filterbank(
            config.n_mels, config.n_fft, config.sample_rate, config.fmin, config.fmax, config.c1, config.c2
        )
    # uncentred frames: zero-padded edge frames would bias the quietest-frame pick
    full = stft_power(clip, config.n_fft, config.hop, config.window, center=len(clip.samples) < config.n_fft)
    noise = estimate_noise(full, config.noise_fraction)
    out = []
    for seg in segment(clip, config.segment_s, config.segment_hop_s):
        spec = spectral_subtract(stft_power(seg, config.n_fft, config.hop, config.window), noise, config.alpha)
        out.append(make_input_tensor(log_mel(spec, fb)).values.astype(np.float32))
    return out
