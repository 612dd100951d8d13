"""Synthetic tone-sequence corpora with held-out perturbation domains, and WAV manifests.

Every symbol is a 120 ms harmonic complex at its own fundamental, shaped by
cosine ramps; an utterance is a concatenation of symbol templates. A domain
profile lists perturbations applied to each utterance after synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import CANONICAL_RATE, Waveform, read_wav, write_wav
from .ctc import LabelSeq
from .dsp_augment import (KINDS, add_noise, apply_mask, band_reject, default_noise_bank,
                          draw_mask_intervals, make_rir, pitch_shift, random_room, reverb)
from .frontend import FrontendSpec


@dataclass(frozen=True)
class CorpusSpec:
    vocab_size: int = 10
    min_length: int = 3
    max_length: int = 8
    n_utterances: int = 400
    base_freq_hz: float = 220.0
    freq_step_cents: float = 300.0
    symbol_ms: float = 120.0
    ramp_ms: float = 10.0
    n_harmonics: int = 4
    freq_jitter_cents: float = 15.0
    amplitude_range: tuple = (0.3, 0.9)
    domain_profile: tuple = ()
    seed: int = 0
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be at least 1")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("utterance length range must satisfy 1 <= min_length <= max_length")
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be at least 1")
        if self.base_freq_hz <= 0 or self.freq_step_cents <= 0 or self.freq_jitter_cents < 0:
            raise ValueError("base_freq_hz and freq_step_cents must be positive, freq_jitter_cents nonnegative")
        if self.n_utterances < 0:
            raise ValueError("n_utterances must be nonnegative")
        if self.symbol_ms <= 2 * self.ramp_ms or self.ramp_ms < 0:
            raise ValueError("symbol_ms must exceed twice ramp_ms")
        top = self.symbol_freq(self.vocab_size - 1) * self.n_harmonics
        if top >= self.sample_rate / 2:
            raise ValueError(f"highest harmonic {top:.0f} Hz exceeds Nyquist")
        object.__setattr__(self, "amplitude_range", tuple(float(a) for a in self.amplitude_range))
        lo, hi = self.amplitude_range if len(self.amplitude_range) == 2 else (0.0, 0.0)
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("amplitude_range must be [lo, hi] with 0 < lo <= hi <= 1")
        object.__setattr__(self, "domain_profile", tuple(_freeze(p) for p in self.domain_profile))
        for p in self.domain_profile:
            if p.get("kind") not in KINDS:
                raise ValueError(f"domain_profile kind {p.get('kind')!r} not in {KINDS}")

    def symbol_freq(self, k: int) -> float:
        return self.base_freq_hz * 2.0 ** (k * self.freq_step_cents / 1200.0)

    @property
    def symbol_samples(self) -> int:
        return int(round(self.symbol_ms * self.sample_rate / 1000.0))

    def check_feasible(self, frontend: FrontendSpec) -> None:
        if self.symbol_samples < frontend.window:
            raise ValueError(f"symbol template ({self.symbol_ms} ms) shorter than one frontend window")
        for n in range(self.min_length, self.max_length + 1):
            if frontend.frame_count(n * self.symbol_samples) < 2 * n + 1:
                raise ValueError(f"length-{n} utterances are not CTC-feasible")


def _freeze(p):
    return _FrozenDict(p)


class _FrozenDict(dict):
    def __hash__(self):
        return hash(tuple(sorted((k, str(v)) for k, v in self.items())))


def symbol_template(spec: CorpusSpec, k: int, rng) -> np.ndarray:
    n = spec.symbol_samples
    t = np.arange(n) / spec.sample_rate
    f0 = spec.symbol_freq(k) * 2.0 ** (rng.uniform(-1.0, 1.0) * spec.freq_jitter_cents / 1200.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    tone = sum(np.sin(2 * np.pi * h * f0 * t + h * phase) / h for h in range(1, spec.n_harmonics + 1))
    ramp = int(round(spec.ramp_ms * spec.sample_rate / 1000.0))
    env = np.ones(n)
    if ramp:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = rise
        env[-ramp:] = rise[::-1]
    return tone * env


def _draw(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def apply_profile(w: Waveform, profile, rng) -> Waveform:
    for p in profile:
        kind = p["kind"]
        if kind == "pitch":
            w = pitch_shift(w, _draw(rng, p.get("cents", (-300.0, 300.0))))
        elif kind == "add":
            bank = default_noise_bank()
            tags = p.get("noise", bank.tags)
            tags = (tags,) if isinstance(tags, str) else tuple(tags)
            tag = tags[int(rng.integers(len(tags)))]
            w = add_noise(w, bank.pick(tag, 0), _draw(rng, p.get("snr_db", (0.0, 40.0))), rng)
        elif kind == "band_rej":
            w = band_reject(w, _draw(rng, p.get("center_hz", (200.0, 2000.0))),
                            _draw(rng, p.get("width_hz", (150.0, 150.0))))
        elif kind == "time_mask":
            w = apply_mask(w, draw_mask_intervals(len(w), w.sample_rate_hz, rng,
                                                  count=int(p.get("count", 10)),
                                                  max_ms=float(p.get("max_ms", 2000.0))))
        elif kind == "reverb":
            room = random_room(rng, absorption_range=tuple(p.get("absorption", (0.2, 0.8))))
            w = reverb(w, make_rir(room, w.sample_rate_hz))
    return w


def generate_utterance(spec: CorpusSpec, index: int):
    rng = np.random.default_rng([spec.seed, index])
    length = int(rng.integers(spec.min_length, spec.max_length + 1))
    ids = [int(i) for i in rng.integers(0, spec.vocab_size, length)]
    gain = _draw(rng, spec.amplitude_range)
    parts = [symbol_template(spec, k, rng) for k in ids]
    x = np.concatenate(parts)
    x = gain * x / np.max(np.abs(x))
    w = apply_profile(Waveform(x, spec.sample_rate), spec.domain_profile, rng)
    return w, LabelSeq(ids)


def generate_corpus(spec: CorpusSpec, frontend: FrontendSpec = FrontendSpec()):
    """Return ``(items, manifest)``: (Waveform, LabelSeq) pairs and ``(name, transcript)`` rows."""
    spec.check_feasible(frontend)
    items = [generate_utterance(spec, i) for i in range(spec.n_utterances)]
    manifest = [(f"utt{i:05d}.wav", y.words) for i, (_, y) in enumerate(items)]
    return items, manifest


# Held-out perturbation profiles standing in for a multi-domain benchmark.
DEFAULT_DOMAINS = {
    "noisy": ({"kind": "add", "snr_db": (0.0, 10.0), "noise": ("babble", "pink")},),
    "reverberant": ({"kind": "reverb", "absorption": (0.05, 0.2)},),
    "pitched": ({"kind": "pitch", "cents": (-120.0, 120.0)},),
    "notched": tuple({"kind": "band_rej", "center_hz": (200.0, 1200.0), "width_hz": (150.0, 150.0)}
                     for _ in range(4)),
    "combined": ({"kind": "pitch", "cents": (-60.0, 60.0)},
                 {"kind": "reverb", "absorption": (0.2, 0.5)},
                 {"kind": "add", "snr_db": (5.0, 20.0), "noise": ("white", "babble")}),
}

IN_DOMAIN = "test"


def benchmark_specs(base: CorpusSpec, n_train: int = 400, n_val: int = 50, n_test: int = 100,
                    domains: dict = None) -> dict:
    """Split specs: train/val/clean test from the clean profile plus one spec per held-out domain."""
    domains = DEFAULT_DOMAINS if domains is None else domains
    out = {
        "train": _respec(base, n_train, base.seed * 1000 + 1, ()),
        "val": _respec(base, n_val, base.seed * 1000 + 2, ()),
        IN_DOMAIN: _respec(base, n_test, base.seed * 1000 + 3, ()),
    }
    for j, (name, profile) in enumerate(sorted(domains.items())):
        out[name] = _respec(base, n_test, base.seed * 1000 + 10 + j, profile)
    return out


def _respec(base: CorpusSpec, n: int, seed: int, profile) -> CorpusSpec:
    fields = {k: getattr(base, k) for k in base.__dataclass_fields__}
    fields.update(n_utterances=n, seed=seed, domain_profile=tuple(profile))
    return CorpusSpec(**fields)


def export_corpus(items, manifest, out_dir, name: str) -> Path:
    """Write WAVs under ``out_dir/name/`` and a ``name.tsv`` manifest with relative paths."""
    out_dir = Path(out_dir)
    (out_dir / name).mkdir(parents=True, exist_ok=True)
    lines = []
    for (w, _), (fname, transcript) in zip(items, manifest):
        write_wav(w, out_dir / name / fname)
        lines.append(f"{name}/{fname}\t{transcript}\n")
    path = out_dir / f"{name}.tsv"
    path.write_text("".join(lines))
    return path


def load_manifest(path):
    """Read ``wav_path<TAB>transcript`` lines; the transcript is everything after the first tab."""
    path = Path(path)
    items = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: malformed manifest line (no tab)")
        wav_path, transcript = line.split("\t", 1)
        wav = Path(wav_path)
        if not wav.is_absolute():
            wav = path.parent / wav
        if not wav.exists():
            raise FileNotFoundError(f"{path}:{lineno}: missing audio file {wav}")
        items.append((read_wav(wav), transcript))
    return items


@dataclass
class Vocabulary:
    words: list = field(default_factory=list)

    @classmethod
    def synthetic(cls, size: int):
        return cls([f"s{i}" for i in range(size)])

    @classmethod
    def from_transcripts(cls, transcripts):
        return cls(sorted({w for t in transcripts for w in t.split()}))

    def encode(self, transcript: str) -> LabelSeq:
        index = {w: i for i, w in enumerate(self.words)}
        try:
            return LabelSeq([index[w] for w in transcript.split()], transcript)
        except KeyError as exc:
            raise ValueError(f"word {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> str:
        return " ".join(self.words[i] for i in ids)

    def __len__(self):
        return len(self.words)
