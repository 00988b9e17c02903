"""RIFF/WAVE reading and writing.

The stdlib :mod:`wave` module rejects IEEE-float and WAVE_FORMAT_EXTENSIBLE
files, both common in field recordings, so chunks are parsed directly.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import WavParseError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    label: str = None
    source_path: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def _decode_pcm(raw, bits, offset):
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v.astype(np.float64) / 8388608.0
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    raise WavParseError(f"unsupported PCM bit depth {bits}", offset)


def read_wav(path, label=None):
    """Load a mono clip from a WAV file; stereo is averaged, integers scaled to [-1, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise WavParseError("file too short for a RIFF header", 0)
    if blob[:4] != b"RIFF":
        raise WavParseError("missing RIFF signature", 0)
    if blob[8:12] != b"WAVE":
        raise WavParseError("missing WAVE form type", 8)

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(blob):
                raise WavParseError("truncated fmt chunk", pos)
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", blob, body)
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavParseError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk", pos)
                (tag,) = struct.unpack_from("<H", blob, body + 24)
            fmt = (tag, channels, rate, block_align, bits, body)
        elif chunk_id == b"data":
            # tolerate writers that leave size unset or overstated
            data = (body, min(size, len(blob) - body))
        pos = body + size + (size & 1)

    if fmt is None:
        raise WavParseError("no fmt chunk found", 12)
    if data is None:
        raise WavParseError("no data chunk found", 12)
    tag, channels, rate, block_align, bits, fmt_at = fmt
    if channels not in (1, 2):
        raise WavParseError(f"unsupported channel count {channels}", fmt_at + 2)
    if rate == 0:
        raise WavParseError("sample rate is zero", fmt_at + 4)
    if block_align != channels * bits // 8:
        raise WavParseError(f"block align {block_align} inconsistent with {channels}ch/{bits}bit", fmt_at + 12)

    start, length = data
    length -= length % block_align
    raw = blob[start : start + length]
    if tag == WAVE_FORMAT_PCM:
        samples = _decode_pcm(raw, bits, fmt_at + 14)
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        elif bits == 64:
            samples = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        else:
            raise WavParseError(f"unsupported float bit depth {bits}", fmt_at + 14)
        if not np.all(np.isfinite(samples)):
            raise WavParseError("non-finite float samples", start)
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise WavParseError(f"unsupported codec tag 0x{tag:04x}", fmt_at)

    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples, int(rate), label=label, source_path=str(path))


def write_wav(path, samples, sample_rate, bits=16):
    """Write mono samples in [-1, 1] as 16-bit PCM or (``bits=32``) IEEE float."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        channels = 1
    elif samples.ndim == 2:
        channels = samples.shape[1]
        samples = samples.reshape(-1)
    else:
        raise ValueError("samples must be 1-D (mono) or 2-D (frames x channels)")
    if bits == 16:
        tag = WAVE_FORMAT_PCM
        payload = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
    elif bits == 32:
        tag = WAVE_FORMAT_IEEE_FLOAT
        payload = samples.astype("<f4").tobytes()
    else:
        raise ValueError("bits must be 16 or 32")
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
