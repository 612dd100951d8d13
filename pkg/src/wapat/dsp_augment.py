"""Waveform augmentation family and an image-source room impulse response.

The five transforms (pitch, add, band_rej, time_mask, reverb) share one
calling convention through :func:`apply_transform`; :func:`sample_transform`
draws a kind and its parameters uniformly over the configured ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .audio_io import CANONICAL_RATE, Waveform, read_wav, resample

KINDS = ("pitch", "add", "band_rej", "time_mask", "reverb")

PITCH_CENTS_RANGE = (-300.0, 300.0)
SNR_DB_RANGE = (0.0, 40.0)
BAND_MAX_WIDTH_HZ = 150.0
BAND_CENTER_RANGE_HZ = (100.0, 7500.0)
TIME_MASK_COUNT = 10
TIME_MASK_MAX_MS = 2000.0

ROOM_DIMS_RANGE = ((3.0, 10.0), (3.0, 10.0), (2.5, 4.5))
ROOM_ABSORPTION_RANGE = (0.2, 0.8)
ROOM_WALL_MARGIN_M = 0.5
DEFAULT_MAX_ORDER = 6
SPEED_OF_SOUND = 343.0


# --------------------------------------------------------------------------
# Parameter records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RoomSpec:
    dims_m: tuple
    source_m: tuple
    mic_m: tuple
    absorption: float = 0.5
    max_order: int = DEFAULT_MAX_ORDER
    speed_of_sound_mps: float = SPEED_OF_SOUND

    def __post_init__(self):
        for name in ("dims_m", "source_m", "mic_m"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ValueError(f"{name} must have 3 coordinates")
            object.__setattr__(self, name, value)
        if any(d <= 0 for d in self.dims_m):
            raise ValueError(f"degenerate room dimensions {self.dims_m}")
        for name in ("source_m", "mic_m"):
            point = getattr(self, name)
            if not all(0.0 < p < d for p, d in zip(point, self.dims_m)):
                raise ValueError(f"{name} {point} is not strictly inside the room")
        if self.source_m == self.mic_m:
            raise ValueError("source and microphone coincide")
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError("absorption must lie in (0, 1]")
        if int(self.max_order) < 0:
            raise ValueError("max_order must be nonnegative")
        if self.speed_of_sound_mps <= 0:
            raise ValueError("speed of sound must be positive")

    @classmethod
    def from_flat(cls, values) -> "RoomSpec":
        """Build from the 11-scalar config layout (dims, source, mic, absorption, max_order)."""
        v = [float(x) for x in values]
        if len(v) != 11:
            raise ValueError(f"RoomSpec needs 11 scalars, got {len(v)}")
        return cls(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]), v[9], int(v[10]))

    def to_flat(self) -> list:
        return [*self.dims_m, *self.source_m, *self.mic_m, self.absorption, float(self.max_order)]


@dataclass(frozen=True)
class AugmentKind:
    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown augmentation {self.tag!r}")
        p = self.params
        if self.tag == "pitch":
            _check_range("cents", p["cents"], *PITCH_CENTS_RANGE)
        elif self.tag == "add":
            _check_range("snr_db", p["snr_db"], *SNR_DB_RANGE)
        elif self.tag == "band_rej":
            if not 0.0 < p["width_hz"] <= BAND_MAX_WIDTH_HZ:
                raise ValueError(f"width_hz {p['width_hz']} outside (0, {BAND_MAX_WIDTH_HZ}]")
        elif self.tag == "reverb":
            if not isinstance(p["room"], RoomSpec):
                raise ValueError("reverb needs a RoomSpec")


def _check_range(name, value, lo, hi):
    if not lo <= value <= hi:
        raise ValueError(f"{name} {value} outside [{lo}, {hi}]")


# --------------------------------------------------------------------------
# Transforms
# --------------------------------------------------------------------------


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def pitch_shift(w: Waveform, cents: float, rng=None) -> Waveform:
    """Shift pitch by resampling; duration scales by 2**(-cents/1200)."""
    _check_range("cents", cents, *PITCH_CENTS_RANGE)
    return resample(w, 2.0 ** (cents / 1200.0))


def fit_noise(noise: Waveform, n: int, rng=None) -> np.ndarray:
    """Tile and crop ``noise`` to ``n`` samples, starting at a random offset if ``rng`` is given."""
    src = noise.samples
    offset = int(rng.integers(src.size)) if rng is not None else 0
    reps = (offset + n) // src.size + 1
    return np.tile(src, reps)[offset:offset + n]


def noise_gain(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    s, n = rms(signal), rms(noise)
    if s == 0.0:
        raise ValueError("cannot set SNR against a silent signal")
    if n == 0.0:
        raise ValueError("noise is silent")
    return s / (n * 10.0 ** (snr_db / 20.0))


def add_noise(w: Waveform, noise: Waveform, snr_db: float, rng=None, clip: bool = True) -> Waveform:
    _check_range("snr_db", snr_db, *SNR_DB_RANGE)
    fitted = fit_noise(noise, len(w), rng)
    out = w.samples + noise_gain(w.samples, fitted, snr_db) * fitted
    if clip:
        out = np.clip(out, -1.0, 1.0)
    return w.with_samples(out)


def band_reject(w: Waveform, center_hz: float, width_hz: float) -> Waveform:
    """Zero every FFT bin whose frequency lies inside the rejected band."""
    lo, hi = center_hz - width_hz / 2.0, center_hz + width_hz / 2.0
    if not 0.0 < width_hz <= BAND_MAX_WIDTH_HZ:
        raise ValueError(f"width_hz {width_hz} outside (0, {BAND_MAX_WIDTH_HZ}]")
    if not (lo > 0.0 and hi < w.sample_rate_hz / 2.0):
        raise ValueError(f"band [{lo}, {hi}] Hz outside (0, Nyquist)")
    n = len(w)
    spectrum = np.fft.rfft(w.samples)
    freqs = np.fft.rfftfreq(n, d=1.0 / w.sample_rate_hz)
    spectrum[(freqs >= lo) & (freqs <= hi)] = 0.0
    return w.with_samples(np.fft.irfft(spectrum, n=n))


def draw_mask_intervals(n: int, sample_rate: int, rng, count: int = TIME_MASK_COUNT,
                        max_ms: float = TIME_MASK_MAX_MS) -> list:
    max_len = int(round(max_ms * sample_rate / 1000.0))
    intervals = []
    for _ in range(count):
        start = int(rng.integers(n))
        length = int(rng.integers(min(max_len, n - start) + 1))
        intervals.append((start, length))
    return intervals


def apply_mask(w: Waveform, intervals) -> Waveform:
    out = np.array(w.samples)
    for start, length in intervals:
        out[start:start + length] = 0.0
    return w.with_samples(out)


def time_mask(w: Waveform, rng) -> Waveform:
    return apply_mask(w, draw_mask_intervals(len(w), w.sample_rate_hz, rng))


def _axis_images(src: float, size: float, max_order: int):
    coords, bounces = [], []
    for n in range(-max_order, max_order + 1):
        for q in (0, 1):
            b = abs(2 * n - q)
            if b <= max_order:
                coords.append((1 - 2 * q) * src + 2 * n * size)
                bounces.append(b)
    return np.array(coords), np.array(bounces)


def make_rir(room: RoomSpec, sample_rate: int = CANONICAL_RATE) -> Waveform:
    """Shoebox image-source impulse response, peak-normalized.

    Each image whose total wall-bounce count is at most ``max_order``
    contributes ``(1 - absorption) ** bounces / distance`` at the nearest
    sample to its propagation delay.
    """
    axes = [_axis_images(s, d, room.max_order) for s, d in zip(room.source_m, room.dims_m)]
    cx, cy, cz = np.meshgrid(axes[0][0], axes[1][0], axes[2][0], indexing="ij")
    bx, by, bz = np.meshgrid(axes[0][1], axes[1][1], axes[2][1], indexing="ij")
    bounces = (bx + by + bz).ravel()
    keep = bounces <= room.max_order
    mic = room.mic_m
    dist = np.sqrt((cx.ravel() - mic[0]) ** 2 + (cy.ravel() - mic[1]) ** 2
                   + (cz.ravel() - mic[2]) ** 2)[keep]
    gains = (1.0 - room.absorption) ** bounces[keep] / dist
    taps = np.round(dist / room.speed_of_sound_mps * sample_rate).astype(np.int64)
    live = gains > 0.0
    taps, gains = taps[live], gains[live]
    h = np.zeros(int(taps.max()) + 1)
    np.add.at(h, taps, gains)
    return Waveform(h / np.max(np.abs(h)), sample_rate)


def reverb(w: Waveform, rir: Waveform) -> Waveform:
    """Convolve with ``rir``, keep the first len(w) samples, restore the input peak."""
    kernel = rir.samples
    x = w.samples
    if kernel.size <= 64:
        wet = np.convolve(x, kernel)[:x.size]
    else:
        wet = fftconvolve(x, kernel)[:x.size]
    peak_in, peak_out = np.max(np.abs(x)), np.max(np.abs(wet))
    if peak_out == 0.0:
        return w.with_samples(np.zeros_like(x))
    return w.with_samples(wet * (peak_in / peak_out))


# --------------------------------------------------------------------------
# Noise bank
# --------------------------------------------------------------------------


def _white(rng, n):
    return rng.standard_normal(n)


def _pink(rng, n):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n=n)


def _babble(rng, n, sample_rate, talkers=6):
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    for _ in range(talkers):
        f0 = rng.uniform(90.0, 260.0)
        vibrato = 1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
        phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sample_rate
        voice = sum(np.sin(k * phase) / k for k in range(1, 12))
        syllables = 0.5 * (1.0 + np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
        out += voice * syllables
    return out


class NoiseBank:
    """Tagged noise recordings used by the ``add`` transform."""

    def __init__(self, entries: dict):
        if not entries:
            raise ValueError("noise bank is empty")
        self.entries = {tag: list(ws) for tag, ws in entries.items()}
        self.tags = tuple(sorted(self.entries))

    @classmethod
    def synthetic(cls, seed: int = 0, seconds: float = 4.0, sample_rate: int = CANONICAL_RATE):
        rng = np.random.default_rng(seed)
        n = int(seconds * sample_rate)
        entries = {}
        for tag, make in (("white", lambda: _white(rng, n)),
                          ("pink", lambda: _pink(rng, n)),
                          ("babble", lambda: _babble(rng, n, sample_rate))):
            x = make()
            entries[tag] = [Waveform(0.5 * x / np.max(np.abs(x)), sample_rate)]
        return cls(entries)

    @classmethod
    def from_manifest(cls, path):
        """Load ``path<TAB>tag`` records; relative paths resolve against the manifest."""
        path = Path(path)
        entries: dict = {}
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'path<TAB>tag'")
            wav_path = Path(parts[0])
            if not wav_path.is_absolute():
                wav_path = path.parent / wav_path
            entries.setdefault(parts[1].strip(), []).append(read_wav(wav_path))
        return cls(entries)

    def pick(self, tag: str, index: int) -> Waveform:
        items = self.entries[tag]
        return items[index % len(items)]


# --------------------------------------------------------------------------
# Sampling and dispatch
# --------------------------------------------------------------------------


def random_room(rng, max_order: int = DEFAULT_MAX_ORDER, absorption_range=ROOM_ABSORPTION_RANGE) -> RoomSpec:
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in ROOM_DIMS_RANGE)
    m = ROOM_WALL_MARGIN_M

    def point():
        return tuple(float(rng.uniform(m, d - m)) for d in dims)

    source, mic = point(), point()
    while mic == source:
        mic = point()
    return RoomSpec(dims, source, mic, float(rng.uniform(*absorption_range)), max_order)


def sample_transform(rng, noise_tags=("babble", "pink", "white"), tag: str | None = None) -> AugmentKind:
    """Draw a transform uniformly over KINDS (or of the given ``tag``) with random parameters."""
    if tag is None:
        tag = KINDS[int(rng.integers(len(KINDS)))]
    elif tag not in KINDS:
        raise ValueError(f"unknown transform {tag!r}; expected one of {KINDS}")
    if tag == "pitch":
        params = {"cents": float(rng.uniform(*PITCH_CENTS_RANGE))}
    elif tag == "add":
        params = {"snr_db": float(rng.uniform(*SNR_DB_RANGE)),
                  "noise": noise_tags[int(rng.integers(len(noise_tags)))],
                  "index": int(rng.integers(1 << 16))}
    elif tag == "band_rej":
        params = {"center_hz": float(rng.uniform(*BAND_CENTER_RANGE_HZ)),
                  "width_hz": BAND_MAX_WIDTH_HZ - float(rng.uniform(0.0, BAND_MAX_WIDTH_HZ))}
    elif tag == "time_mask":
        params = {}
    else:
        params = {"room": random_room(rng)}
    return AugmentKind(tag, params)


def apply_transform(w: Waveform, kind: AugmentKind, rng, noise_bank: NoiseBank | None = None,
                    rir: Waveform | None = None) -> Waveform:
    """Apply ``kind`` to ``w``; ``rng`` supplies any per-item randomness.

    ``rir`` lets a caller reuse one impulse response across a batch.
    """
    p = kind.params
    if kind.tag == "pitch":
        return pitch_shift(w, p["cents"])
    if kind.tag == "add":
        bank = noise_bank or default_noise_bank()
        if rms(w.samples) == 0.0:
            return w
        return add_noise(w, bank.pick(p["noise"], p.get("index", 0)), p["snr_db"], rng)
    if kind.tag == "band_rej":
        nyquist = w.sample_rate_hz / 2.0
        half = p["width_hz"] / 2.0
        center = min(max(p["center_hz"], half + 1.0), nyquist - half - 1.0)
        return band_reject(w, center, p["width_hz"])
    if kind.tag == "time_mask":
        return time_mask(w, rng)
    if rir is None:
        rir = make_rir(p["room"], w.sample_rate_hz)
    return reverb(w, rir)


_DEFAULT_BANK = None


def default_noise_bank() -> NoiseBank:
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = NoiseBank.synthetic()
    return _DEFAULT_BANK


def image_count_bound(max_order: int) -> int:
    return (2 * max_order + 1) ** 3


def direct_delay_samples(room: RoomSpec, sample_rate: int = CANONICAL_RATE) -> int:
    return int(round(math.dist(room.source_m, room.mic_m) / room.speed_of_sound_mps * sample_rate))

