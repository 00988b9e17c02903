"""Synthetic pulsed-tone corpus: one carrier frequency per class, plus noise."""

import os

import numpy as np

from .dsp import DSPConfig, hz_to_mel, mel_to_hz
from .wav import AudioClip, write_wav


def carrier_frequencies(n_classes, config=DSPConfig()):
    """Carriers on every other Mel-filter centre, so each class owns its own bands."""
    lo, hi = hz_to_mel(config.fmin, config.c1, config.c2), hz_to_mel(config.fmax, config.c1, config.c2)
    centres = mel_to_hz(np.linspace(lo, hi, config.n_mels + 2)[1:-1], config.c1, config.c2)
    first = 4
    picks = first + 2 * np.arange(n_classes)
    if picks[-1] >= config.n_mels:
        raise ValueError(f"{n_classes} classes do not fit in {config.n_mels} Mel bands at stride 2")
    return centres[picks]


def tone_clip(freq, rng, sample_rate=16000, duration_s=1.5, snr_db=(6.0, 14.0)):
    """Gated sine at ``freq`` (+-0.5% jitter) in white noise.

    The gate is 0.25 s on / 0.125 s off with a random phase, which leaves
    noise-only frames for the noise-floor estimate.
    """
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f = freq * (1.0 + rng.uniform(-0.005, 0.005))
    tone = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    period, on = 0.375, 0.25
    gate = ((t + rng.uniform(0, period)) % period) < on
    # 5 ms raised-cosine edges avoid broadband clicks
    ramp = int(0.005 * sample_rate)
    kernel = np.hanning(2 * ramp + 1)
    gate = np.convolve(gate.astype(float), kernel / kernel.sum(), mode="same")
    signal = 0.3 * tone * gate
    snr = rng.uniform(*snr_db)
    noise_rms = np.sqrt(np.mean(signal**2)) / (10 ** (snr / 20))
    out = signal + rng.standard_normal(n) * noise_rms
    return np.clip(out, -1.0, 1.0)


def write_tone_dataset(root, n_classes=27, clips_per_class=8, duration_s=1.5, seed=0, config=DSPConfig()):
    """Write ``root/class_XX/clip_YY.wav``; returns the carrier frequency per class."""
    rng = np.random.default_rng(seed)
    freqs = carrier_frequencies(n_classes, config)
    for c, freq in enumerate(freqs):
        d = os.path.join(root, f"class_{c:02d}")
        os.makedirs(d, exist_ok=True)
        for k in range(clips_per_class):
            samples = tone_clip(freq, rng, config.sample_rate, duration_s)
            write_wav(os.path.join(d, f"clip_{k:02d}.wav"), samples, config.sample_rate)
    return freqs


def tone_clips(n_classes=27, clips_per_class=8, duration_s=1.5, seed=0, config=DSPConfig()):
    """In-memory variant of :func:`write_tone_dataset`; yields labelled clips."""
    rng = np.random.default_rng(seed)
    out = []
    for c, freq in enumerate(carrier_frequencies(n_classes, config)):
        for _ in range(clips_per_class):
            out.append(AudioClip(tone_clip(freq, rng, config.sample_rate, duration_s), config.sample_rate, label=c))
    return out
