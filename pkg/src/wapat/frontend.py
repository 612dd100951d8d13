"""Frozen phoneme-representation frontend.

Hann-windowed power spectrum, log-mel energies and a fixed random projection.
Nothing here is trainable; the projection is regenerated from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import CANONICAL_RATE, Waveform

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FrontendSpec:
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    d: int = 32
    projection_seed: int = 0
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if self.n_mels < 1 or self.d < 1:
            raise ValueError("n_mels and d must be positive")
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("window_ms and hop_ms must be positive")

    @property
    def window(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def n_fft(self) -> int:
        return 1 << (self.window - 1).bit_length()

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.window:
            return 0
        return 1 + (n_samples - self.window) // self.hop


@dataclass(frozen=True)
class PhonemeRepr:
    frames: np.ndarray
    frame_hop_ms: float

    @property
    def d(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1)."""
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins[None, :] - lo) / (mid - lo)
    down = (hi - bins[None, :]) / (hi - mid)
    return np.clip(np.minimum(up, down), 0.0, None)


class Frontend:
    """Tokenizer bound to one :class:`FrontendSpec`; parameters fixed at construction."""

    def __init__(self, spec: FrontendSpec):
        self.spec = spec
        n = spec.window
        self.hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
        self.fbank = mel_filterbank(spec.n_mels, spec.n_fft, spec.sample_rate)
        rng = np.random.default_rng(spec.projection_seed)
        self.projection = rng.standard_normal((spec.n_mels, spec.d)) / np.sqrt(spec.n_mels)
        for arr in (self.hann, self.fbank, self.projection):
            arr.setflags(write=False)

    def _frames(self, samples: np.ndarray) -> np.ndarray:
        spec = self.spec
        if samples.size < spec.window:
            raise ValueError(f"input of {samples.size} samples is shorter than one "
                             f"{spec.window}-sample window")
        view = np.lib.stride_tricks.sliding_window_view(samples, spec.window)
        return view[::spec.hop]

    def _analyze(self, samples: np.ndarray):
        spectrum = np.fft.rfft(self._frames(samples) * self.hann, n=self.spec.n_fft, axis=1)
        power = spectrum.real ** 2 + spectrum.imag ** 2
        mel = power @ self.fbank.T
        return spectrum, mel

    def log_mel(self, x: Waveform) -> np.ndarray:
        _, mel = self._analyze(self._samples(x))
        return np.log(np.maximum(mel, LOG_FLOOR))

    def tokenize(self, x: Waveform) -> PhonemeRepr:
        return PhonemeRepr(self.log_mel(x) @ self.projection, self.spec.hop_ms)

    def vjp(self, x: Waveform, grad_frames: np.ndarray) -> np.ndarray:
        """Pull a gradient on the output frames back to the waveform samples."""
        samples = self._samples(x)
        spec = self.spec
        spectrum, mel = self._analyze(samples)
        grad_log = np.asarray(grad_frames) @ self.projection.T
        live = mel > LOG_FLOOR
        grad_mel = np.where(live, grad_log / np.where(live, mel, 1.0), 0.0)
        grad_power = grad_mel @ self.fbank
        weighted = grad_power * spectrum
        weighted[:, 0] *= 2.0
        if spec.n_fft % 2 == 0:
            weighted[:, -1] *= 2.0
        grad_windowed = spec.n_fft * np.fft.irfft(weighted, n=spec.n_fft, axis=1)[:, :spec.window]
        grad_frame = grad_windowed * self.hann
        out = np.zeros(samples.size)
        for t in range(grad_frame.shape[0]):
            out[t * spec.hop:t * spec.hop + spec.window] += grad_frame[t]
        return out

    def _samples(self, x) -> np.ndarray:
        if isinstance(x, Waveform):
            if x.sample_rate_hz != self.spec.sample_rate:
                raise ValueError(f"expected {self.spec.sample_rate} Hz input, got {x.sample_rate_hz}")
            return x.samples
        return np.asarray(x, dtype=np.float64)


@lru_cache(maxsize=16)
def get_frontend(spec: FrontendSpec) -> Frontend:
    return Frontend(spec)


def tokenize(x: Waveform, spec: FrontendSpec = FrontendSpec()) -> PhonemeRepr:
    return get_frontend(spec).tokenize(x)
