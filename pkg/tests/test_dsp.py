import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbca import dsp
from mtbca.errors import ConfigError, DimensionError, WavParseError
from mtbca.wav import AudioClip, read_wav, write_wav


def _raw_wav(path, payload, channels=1, rate=8000, bits=16, tag=1):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# read_wav


def test_read_16bit_scaling(tmp_path):
    p = tmp_path / "a.wav"
    _raw_wav(p, np.array([0, 16384, -32768], dtype="<i2").tobytes())
    clip = read_wav(p)
    np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -1.0])
    assert clip.sample_rate == 8000


def test_read_stereo_downmix(tmp_path):
    p = tmp_path / "s.wav"
    frames = np.tile(np.array([0.2, 0.4], dtype="<f4"), 10)
    _raw_wav(p, frames.tobytes(), channels=2, bits=32, tag=3)
    np.testing.assert_allclose(read_wav(p).samples, 0.3, atol=1e-7)


def test_read_8bit_and_24bit(tmp_path):
    p8 = tmp_path / "b8.wav"
    _raw_wav(p8, bytes([128, 192, 0]), bits=8)
    np.testing.assert_array_equal(read_wav(p8).samples, [0.0, 0.5, -1.0])
    p24 = tmp_path / "b24.wav"
    vals = [0, 1 << 22, -(1 << 23)]
    raw = b"".join(int(v & 0xFFFFFF).to_bytes(3, "little") for v in vals)
    _raw_wav(p24, raw, bits=24)
    np.testing.assert_array_equal(read_wav(p24).samples, [0.0, 0.5, -1.0])


def test_read_32bit_int(tmp_path):
    p = tmp_path / "i32.wav"
    _raw_wav(p, np.array([1 << 30, -(1 << 31)], dtype="<i4").tobytes(), bits=32)
    np.testing.assert_array_equal(read_wav(p).samples, [0.5, -1.0])


def test_sine_round_trip(tmp_path):
    sr = 16000
    t = np.arange(sr) / sr
    x = 0.8 * np.sin(2 * np.pi * 440 * t)
    write_wav(tmp_path / "sine.wav", x, sr)
    back = read_wav(tmp_path / "sine.wav")
    assert back.sample_rate == sr
    assert np.max(np.abs(back.samples - x)) < 1 / 32768


def test_float_round_trip(tmp_path):
    x = np.linspace(-1, 1, 101)
    write_wav(tmp_path / "f.wav", x, 22050, bits=32)
    np.testing.assert_allclose(read_wav(tmp_path / "f.wav").samples, x, atol=1e-7)


@pytest.mark.parametrize(
    "blob,offset",
    [
        (b"RIF", 0),
        (b"RIFX\x00\x00\x00\x00WAVE", 0),
        (b"RIFF\x04\x00\x00\x00AVI ", 8),
    ],
)
def test_malformed_header(tmp_path, blob, offset):
    p = tmp_path / "bad.wav"
    p.write_bytes(blob)
    with pytest.raises(WavParseError) as info:
        read_wav(p)
    assert info.value.offset == offset
    assert "offset" in str(info.value)


def test_unsupported_codec(tmp_path):
    p = tmp_path / "alaw.wav"
    _raw_wav(p, b"\x00\x00", bits=8, tag=6)
    with pytest.raises(WavParseError, match="codec"):
        read_wav(p)


def test_missing_data_chunk(tmp_path):
    p = tmp_path / "nodata.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavParseError, match="data"):
        read_wav(p)


# resample


def test_resample_identity():
    clip = AudioClip(np.random.default_rng(0).uniform(-1, 1, 100), 16000)
    np.testing.assert_array_equal(dsp.resample(clip, 16000).samples, clip.samples)


def test_resample_sine_correlation():
    t = np.arange(48000) / 48000
    clip = AudioClip(np.sin(2 * np.pi * 100 * t), 48000)
    out = dsp.resample(clip, 16000)
    assert out.sample_rate == 16000
    ref = np.sin(2 * np.pi * 100 * np.arange(len(out.samples)) / 16000)
    assert np.corrcoef(out.samples, ref)[0, 1] > 0.999
    assert abs(out.duration - clip.duration) <= 1 / 16000


@pytest.mark.parametrize("target", [8000, 11025, 22050, 44100])
def test_resample_dc(target):
    out = dsp.resample(AudioClip(np.full(16000, 0.5), 16000), target)
    np.testing.assert_allclose(out.samples, 0.5)
    assert abs(out.duration - 1.0) <= 1 / target


# segment


def test_segment_two_seconds():
    clip = AudioClip(np.zeros(32000), 16000)
    segs = dsp.segment(clip, 1.5, 0.05)
    assert len(segs) == math.floor((2.0 - 1.5) / 0.05) + 1 == 11
    assert all(len(s.samples) == 24000 for s in segs)


def test_segment_exact_window():
    x = np.random.default_rng(0).standard_normal(24000)
    segs = dsp.segment(AudioClip(x, 16000))
    assert len(segs) == 1
    np.testing.assert_array_equal(segs[0].samples, x)


def test_segment_short_clip_padded():
    segs = dsp.segment(AudioClip(np.ones(16000), 16000))
    assert len(segs) == 1
    assert len(segs[0].samples) == 24000
    assert segs[0].samples[16000:].sum() == 0


@settings(max_examples=60, deadline=None)
@given(length=st.integers(min_value=2400, max_value=20000))
def test_segment_count_formula(length):
    sr = 1600
    win, hop = 2400, 80
    assert len(dsp.segment(AudioClip(np.zeros(length), sr), 1.5, 0.05)) == (length - win) // hop + 1


# STFT


def test_stft_shape_and_zero():
    spec = dsp.stft_power(AudioClip(np.zeros(24000), 16000), 1024, 256)
    assert spec.values.shape == (94, 513)
    assert not spec.values.any()


def _tone_at_bin(k, n_fft=1024, sr=16000, n=8192):
    t = np.arange(n)
    return AudioClip(np.cos(2 * np.pi * k * t / n_fft), sr)


def test_stft_bin_centred_sine_hann_fraction():
    # analytic Hann DFT: coefficients 1/2 at the bin, -1/4 at each neighbour,
    # so the centre bin holds (1/4) / (1/4 + 2/16) = 2/3 of the energy
    spec = dsp.stft_power(_tone_at_bin(40), 1024, 256, "hann", center=False)
    frac = spec.values[:, 40] / spec.values.sum(axis=1)
    np.testing.assert_allclose(frac, 2 / 3, rtol=1e-9)


def test_stft_bin_centred_sine_rect_concentrated():
    spec = dsp.stft_power(_tone_at_bin(40), 1024, 256, "rect", center=False)
    frac = spec.values[:, 40] / spec.values.sum(axis=1)
    assert np.all(frac > 0.9)


@pytest.mark.parametrize("seed", range(5))
def test_stft_parseval(seed):
    rng = np.random.default_rng(seed)
    clip = AudioClip(rng.uniform(-1, 1, 5000), 16000)
    spec = dsp.stft_power(clip, 512, 128)
    frames = dsp.frame_signal(clip.samples, 512, 128) * dsp.make_window("hann", 512)
    time_energy = (frames**2).sum(axis=1)
    p = spec.values
    freq_energy = (p[:, 0] + 2 * p[:, 1:-1].sum(axis=1) + p[:, -1]) / 512
    np.testing.assert_allclose(freq_energy, time_energy, rtol=1e-3)


def test_stft_short_clip_warns():
    with pytest.warns(UserWarning):
        spec = dsp.stft_power(AudioClip(np.ones(100), 16000), 1024, 256, center=False)
    assert spec.values.shape == (1, 513)


def test_stft_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        dsp.stft_power(AudioClip(np.ones(2000), 16000), 1000, 256)


# noise + subtraction


def _spec(values):
    return dsp.PowerSpectrogram(np.asarray(values, dtype=float), 8, 4, 16000)


def test_noise_silent_frame():
    vals = np.abs(np.random.default_rng(0).standard_normal((20, 5))) + 1.0
    vals[7] = 0.0
    prof = dsp.estimate_noise(_spec(vals), fraction=0.05)
    assert prof.frames_used == 1
    np.testing.assert_array_equal(prof.values, 0.0)


def test_noise_constant():
    prof = dsp.estimate_noise(_spec(np.full((10, 4), 2.5)), 0.3)
    np.testing.assert_allclose(prof.values, 2.5)
    assert prof.frames_used == 3


def test_noise_profile_of_mix():
    rng = np.random.default_rng(1)
    sr, sigma, n_fft = 16000, 0.05, 1024
    n = 40 * sr
    noise = sigma * rng.standard_normal(n)
    t = np.arange(n) / sr
    tone = np.where(t < 20, 0.5 * np.sin(2 * np.pi * 1000 * t), 0.0)
    spec = dsp.stft_power(AudioClip(noise + tone, sr), n_fft, 256, center=False)
    prof = dsp.estimate_noise(spec, fraction=0.4)
    # white noise through a window w: E|X_b|^2 = sigma^2 * sum(w^2)
    true = sigma**2 * (dsp.make_window("hann", n_fft) ** 2).sum()
    rel = np.abs(prof.values[1:-1] / true - 1.0)
    assert rel.max() < 0.2


def test_subtract_alpha_zero_identity():
    vals = np.random.default_rng(0).random((6, 5))
    out = dsp.spectral_subtract(_spec(vals), dsp.NoiseProfile(np.ones(5), 1), 0.0)
    np.testing.assert_array_equal(out.values, vals)


def test_subtract_exact_cancellation():
    vals = np.random.default_rng(0).random((1, 5))
    out = dsp.spectral_subtract(_spec(vals), dsp.NoiseProfile(vals[0], 1), 1.0)
    np.testing.assert_array_equal(out.values, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_subtract_formula_oracle(seed):
    rng = np.random.default_rng(seed)
    px = rng.random((30, 17))
    pn = rng.random(17) * 0.5
    out = dsp.spectral_subtract(_spec(px), dsp.NoiseProfile(pn, 3), 1.5).values
    for i in range(30):
        for j in range(17):
            assert out[i, j] == max(px[i, j] - 1.5 * pn[j], 0.0)


def test_subtract_monotone_in_alpha():
    rng = np.random.default_rng(3)
    spec, noise = _spec(rng.random((10, 9))), dsp.NoiseProfile(rng.random(9), 1)
    prev = None
    for alpha in np.linspace(0, 3, 13):
        out = dsp.spectral_subtract(spec, noise, alpha).values
        assert np.all(out >= 0)
        if prev is not None:
            assert np.all(out <= prev)
        prev = out


def test_subtract_bin_mismatch():
    with pytest.raises(DimensionError):
        dsp.spectral_subtract(_spec(np.ones((2, 5))), dsp.NoiseProfile(np.ones(4), 1))


# Mel


@pytest.mark.parametrize("c1,c2", [(2595, 700), (1127, 700), (1000, 1000)])
def test_mel_zero(c1, c2):
    assert dsp.hz_to_mel(0.0, c1, c2) == 0.0


def test_mel_700():
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))
    assert dsp.hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)


def test_mel_inverse():
    f = np.linspace(0, 8000, 50)
    np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel(f)), f, atol=1e-9)


def test_filterbank_partition_of_unity():
    fb = dsp.mel_filterbank(64, 1024, 16000, 0, 8000)
    freqs = np.arange(513) * 16000 / 1024
    edges = fb.center_frequencies
    inside = (freqs > edges[1]) & (freqs < edges[-2])
    np.testing.assert_allclose(fb.filters[:, inside].sum(axis=0), 1.0, atol=1e-6)


def test_filterbank_triangle_shape():
    fb = dsp.mel_filterbank(40, 512, 22050, 50, 11025)
    edges = fb.center_frequencies
    freqs = np.arange(257) * 22050 / 512
    assert np.all(fb.filters >= 0)
    for m in range(40):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        row = fb.filters[m]
        assert np.all(row[(freqs < lo) | (freqs > hi)] == 0)
        assert fb.response([mid])[m, 0] == pytest.approx(1.0)
        assert row.max() <= 1.0
        # sampled peak sits on one of the two bins bracketing the centre
        below = np.searchsorted(freqs, mid) - 1
        assert row.argmax() in (below, below + 1)


def test_filterbank_bad_range():
    with pytest.raises(ConfigError):
        dsp.mel_filterbank(64, 1024, 16000, 0, 9000)
    with pytest.raises(ConfigError):
        dsp.mel_filterbank(1, 1024, 16000, 0, 8000)


def test_log_mel_zero_floor():
    fb = dsp.mel_filterbank(8, 64, 8000, 0, 4000)
    out = dsp.log_mel(dsp.PowerSpectrogram(np.zeros((3, 33)), 64, 16, 8000), fb)
    np.testing.assert_allclose(out, math.log(1e-10))


def test_log_mel_impulse_support():
    fb = dsp.mel_filterbank(8, 64, 8000, 0, 4000)
    vals = np.zeros((1, 33))
    vals[0, 10] = 1.0
    out = dsp.log_mel(dsp.PowerSpectrogram(vals, 64, 16, 8000), fb)
    responding = out[0] > math.log(1e-10) + 1e-6
    np.testing.assert_array_equal(responding, fb.filters[:, 10] > 0)


def test_log_mel_matches_dense_oracle():
    rng = np.random.default_rng(0)
    fb = dsp.mel_filterbank(16, 256, 16000, 0, 8000)
    vals = rng.random((5, 129))
    ref = np.zeros((5, 16))
    for t in range(5):
        for m in range(16):
            ref[t, m] = math.log(sum(fb.filters[m, b] * vals[t, b] for b in range(129)) + 1e-10)
    np.testing.assert_allclose(dsp.log_mel(dsp.PowerSpectrogram(vals, 256, 64, 16000), fb), ref, rtol=1e-12)


# input tensor


def test_input_tensor_constant_delta_zero():
    ft = dsp.make_input_tensor(np.full((10, 6), -3.0))
    assert ft.values.shape == (2, 10, 6)
    # channel 1 is all equal (zero delta, then standardised)
    assert np.ptp(ft.values[1]) == 0


def test_input_tensor_standardised():
    mel = np.random.default_rng(0).standard_normal((94, 64)) * 4 + 2
    ft = dsp.make_input_tensor(mel)
    assert ft.values.shape == (2, 94, 64)
    assert abs(ft.values.mean()) < 1e-4
    assert abs(ft.values.std() - 1) < 1e-4
    # delta before standardisation is recoverable
    raw_delta = ft.values[1] * ft.std + ft.mean
    np.testing.assert_allclose(raw_delta[1:], mel[1:] - mel[:-1], atol=1e-9)
    np.testing.assert_allclose(raw_delta[0], 0.0, atol=1e-9)


def test_pipeline_shape_and_determinism():
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.uniform(-0.5, 0.5, 44100 * 2), 44100)
    cfg = dsp.DSPConfig()
    a = dsp.clip_features(clip, cfg)
    b = dsp.clip_features(clip, cfg)
    assert len(a) == 11
    assert a[0].shape == (2,) + cfg.feature_shape() == (2, 94, 64)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_fingerprint_changes_with_config():
    assert dsp.DSPConfig().fingerprint() == dsp.DSPConfig().fingerprint()
    assert dsp.DSPConfig(n_mels=32).fingerprint() != dsp.DSPConfig().fingerprint()
