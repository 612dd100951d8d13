"""Run configuration: one TOML file with nested sections, parsed strictly.

Sections and keys (all optional; omitted keys keep their defaults)::

    [frontend]  n_mels, window_ms, hop_ms, d, projection_seed
    [corpus]    vocab_size, min_length, max_length, n_train, n_val, n_test,
                base_freq_hz, freq_step_cents, symbol_ms, ramp_ms, n_harmonics,
                freq_jitter_cents, amplitude_range, seed
    [train]     mode, batch_seconds, seed, hidden, waveform_steps, threads
    [attack]    epsilon, alpha, guidance_weight
    [schedule]  lr_max, phases, total_steps

Unknown sections or keys are rejected, and every range check runs at load.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .adversary import AttackConfig
from .datagen import CorpusSpec
from .frontend import FrontendSpec
from .model import ScheduleSpec
from .trainer import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class SplitSizes:
    n_train: int = 400
    n_val: int = 50
    n_test: int = 100

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendSpec = FrontendSpec()
    corpus: CorpusSpec = CorpusSpec()
    splits: SplitSizes = SplitSizes()
    train: TrainConfig = TrainConfig()

    def with_overrides(self, mode=None, epsilon=None, seed=None, threads=None) -> "RunConfig":
        """Apply command-line flags; ``seed`` reseeds both corpus and training."""
        train, corpus = self.train, self.corpus
        kw = {}
        if mode is not None:
            kw["mode"] = mode
        if epsilon is not None:
            kw["epsilon"] = epsilon
        if seed is not None:
            kw["seed"] = seed
            corpus = replace(corpus, seed=seed)
        if threads is not None:
            kw["threads"] = threads
        try:
            train = train.with_overrides(**kw)
        except ValueError as exc:
            raise ConfigError(f"command line: {exc}") from None
        return replace(self, train=train, corpus=corpus)

    def to_dict(self) -> dict:
        """Plain mapping of every setting except thread count (which never affects results)."""
        t = self.train
        return {
            "frontend": _public(self.frontend, exclude=("sample_rate",)),
            "corpus": {**_public(self.corpus, exclude=("n_utterances", "domain_profile", "sample_rate")),
                       **_public(self.splits)},
            "train": {"mode": t.mode, "batch_seconds": t.batch_seconds, "seed": t.seed,
                      "hidden": t.hidden, "waveform_steps": t.waveform_steps},
            "attack": {"epsilon": t.attack.epsilon, "alpha": t.attack.alpha,
                       "guidance_weight": t.attack.guidance_weight},
            "schedule": _public(t.schedule),
        }


def _public(obj, exclude=()) -> dict:
    out = {}
    for f in fields(obj):
        if f.name in exclude:
            continue
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


_CORPUS_KEYS = ("vocab_size", "min_length", "max_length", "base_freq_hz", "freq_step_cents", "symbol_ms",
                "ramp_ms", "n_harmonics", "freq_jitter_cents", "amplitude_range", "seed")
_SPLIT_KEYS = ("n_train", "n_val", "n_test")
_SCHEMA = {
    "frontend": {"n_mels": int, "window_ms": float, "hop_ms": float, "d": int, "projection_seed": int},
    "corpus": {**{k: float for k in ("base_freq_hz", "freq_step_cents", "symbol_ms", "ramp_ms",
                                     "freq_jitter_cents")},
               **{k: int for k in ("vocab_size", "min_length", "max_length", "n_harmonics", "seed",
                                   *_SPLIT_KEYS)},
               "amplitude_range": list},
    "train": {"mode": str, "batch_seconds": float, "seed": int, "hidden": int, "waveform_steps": int,
              "threads": int},
    "attack": {"epsilon": float, "alpha": float, "guidance_weight": float},
    "schedule": {"lr_max": float, "phases": list, "total_steps": int},
}


def _coerce(section: str, key: str, value, kind):
    where = f"{section}.{key}"
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    if kind is list and isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        return tuple(float(v) for v in value)
    raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")


def _build(section: str, ctor, **kw):
    try:
        return ctor(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(data: dict) -> RunConfig:
    """Validate a nested mapping (as read from TOML) into a :class:`RunConfig`."""
    for section in data:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(_SCHEMA)}")
    values = {}
    for section, schema in _SCHEMA.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in raw.items():
            if key not in schema:
                raise ConfigError(f"unknown key {section}.{key}")
        values[section] = {k: _coerce(section, k, v, schema[k]) for k, v in raw.items()}

    fe = _build("frontend", FrontendSpec, **values["frontend"])
    corpus_kw = {k: v for k, v in values["corpus"].items() if k in _CORPUS_KEYS}
    corpus = _build("corpus", CorpusSpec, **corpus_kw)
    try:
        corpus.check_feasible(fe)
    except ValueError as exc:
        raise ConfigError(f"[corpus] {exc}") from None
    splits = _build("corpus", SplitSizes, **{k: v for k, v in values["corpus"].items() if k in _SPLIT_KEYS})
    attack_kw = dict(values["attack"])
    attack = _build("attack", AttackConfig, **attack_kw)
    schedule = _build("schedule", ScheduleSpec, **values["schedule"])
    train_kw = dict(values["train"])
    train = _build("train", TrainConfig, attack=attack, schedule=schedule, frontend=fe, **train_kw)
    return RunConfig(fe, corpus, splits, train)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)


def dump_config(cfg: RunConfig) -> str:
    """TOML text that :func:`load_config` reads back to an equal configuration."""
    lines = []
    for section, table in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in table.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)
