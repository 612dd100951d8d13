"""Waveform container, 16-bit PCM WAV codec and windowed-sinc resampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

CANONICAL_RATE = 16000
RESAMPLE_HALF_WIDTH = 32


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Quantize floats to int16 words: clamp(round(s * 32768)), the inverse of the read scaling."""
    words = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(words, -32768, 32767).astype("<i2")


def from_pcm16(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.float64) / 32768.0


def encode_wav(w: Waveform) -> bytes:
    data = to_pcm16(w.samples).tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, w.sample_rate_hz, w.sample_rate_hz * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    if len(data) % 2:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def decode_wav(blob: bytes) -> Waveform:
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        payload = blob[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", payload, 0)
            if fmt[0] == 0xFFFE and size >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the subformat GUID leads with the real code
                (sub,) = struct.unpack_from("<H", payload, 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError("data chunk precedes fmt chunk")
            code, channels, rate, _, block_align, bits = fmt
            if code != 1 or bits != 16:
                raise WavFormatError(f"unsupported encoding (format {code}, {bits} bit)")
            if channels < 1 or rate <= 0:
                raise WavFormatError("invalid channel count or sample rate")
            n_frames = len(payload) // (2 * channels)
            if n_frames == 0:
                raise WavFormatError("empty data payload")
            words = np.frombuffer(payload[:n_frames * 2 * channels], dtype="<i2")
            return Waveform(from_pcm16(words.reshape(n_frames, channels)[:, 0]), rate)
        pos += 8 + size + (size % 2)
    raise WavFormatError("no data chunk found")


def read_wav(path) -> Waveform:
    return decode_wav(Path(path).read_bytes())


def write_wav(w: Waveform, path) -> None:
    Path(path).write_bytes(encode_wav(w))


@njit(cache=True)
def _resample_kernel(x, n_out, factor, cutoff, half):
    reach = int(np.ceil(half))
    width = 2 * reach
    # offsets of tap k from the output position are phi + reach - 1 - k, phi in [0, 1)
    sin_b = np.empty(width)
    cos_b = np.empty(width)
    sin_w = np.empty(width)
    cos_w = np.empty(width)
    for k in range(width):
        b = np.pi * cutoff * (reach - 1 - k)
        sin_b[k], cos_b[k] = np.sin(b), np.cos(b)
        bw = np.pi * (reach - 1 - k) / half
        sin_w[k], cos_w[k] = np.sin(bw), np.cos(bw)
    out = np.zeros(n_out)
    for n in range(n_out):
        pos = n * factor
        base = int(np.floor(pos))
        phi = pos - base
        sa, ca = np.sin(np.pi * cutoff * phi), np.cos(np.pi * cutoff * phi)
        sw, cw = np.sin(np.pi * phi / half), np.cos(np.pi * phi / half)
        acc = 0.0
        for k in range(width):
            j = base - reach + 1 + k
            if j < 0 or j >= x.size:
                continue
            off = phi + reach - 1 - k
            if off <= -half or off >= half:
                continue
            arg = np.pi * cutoff * off
            if arg == 0.0:
                sinc = 1.0
            else:
                sinc = (sa * cos_b[k] + ca * sin_b[k]) / arg
            c1 = cw * cos_w[k] - sw * sin_w[k]
            window = 0.42 + 0.5 * c1 + 0.08 * (2.0 * c1 * c1 - 1.0)
            acc += x[j] * cutoff * sinc * window
        out[n] = acc
    return out


def resample(w: Waveform, factor: float) -> Waveform:
    """Read ``w`` at ``factor`` times its rate: output[n] = w(n * factor).

    factor > 1 shortens the signal and raises every frequency by ``factor``;
    the sinc cutoff drops to ``1/factor`` of Nyquist to suppress aliasing.
    The Blackman-windowed kernel spans 32 zero crossings on each side.
    Samples outside the input are treated as zero.
    """
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"resample factor {factor} outside [0.5, 2.0]")
    n_out = int(round(len(w) / factor))
    if n_out < 1:
        raise ValueError("resampled signal would be empty")
    cutoff = min(1.0, 1.0 / factor)
    out = _resample_kernel(w.samples, n_out, float(factor), cutoff, RESAMPLE_HALF_WIDTH / cutoff)
    return Waveform(out, w.sample_rate_hz)
