"""Benchmark assembly on disk and in memory, and the mode/epsilon ablation matrix."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import (IN_DOMAIN, CorpusSpec, Vocabulary, benchmark_specs, export_corpus, generate_corpus,
                      load_manifest)
from .frontend import FrontendSpec
from .metrics import EvalResult, evaluate
from .trainer import TrainConfig, Trainer, train

log = logging.getLogger(__name__)

TRAIN_SPLIT, VAL_SPLIT = "train", "val"


def build_benchmark(corpus: CorpusSpec, n_train: int = 400, n_val: int = 50, n_test: int = 100,
                    frontend: FrontendSpec = FrontendSpec()) -> dict:
    """Generate every split in memory: name -> (items, manifest rows)."""
    specs = benchmark_specs(corpus, n_train, n_val, n_test)
    return {name: generate_corpus(spec, frontend) for name, spec in specs.items()}


def write_benchmark(benchmark: dict, out_dir) -> dict:
    """Export each split as WAVs plus ``<name>.tsv``; returns name -> manifest path."""
    return {name: export_corpus(items, manifest, out_dir, name)
            for name, (items, manifest) in sorted(benchmark.items())}


def manifest_paths(corpus_dir) -> dict:
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    paths = {p.stem: p for p in sorted(corpus_dir.glob("*.tsv"))}
    if TRAIN_SPLIT not in paths:
        raise FileNotFoundError(f"no {TRAIN_SPLIT}.tsv manifest in {corpus_dir}")
    return paths


def load_split(path, vocab: Vocabulary):
    return [(w, vocab.encode(t)) for w, t in load_manifest(path)]


def load_eval_suites(corpus_dir) -> dict:
    """Every manifest except train/val, as (Waveform, transcript) pairs."""
    return {name: load_manifest(p) for name, p in manifest_paths(corpus_dir).items()
            if name not in (TRAIN_SPLIT, VAL_SPLIT)}


# --------------------------------------------------------------------------
# Ablation matrix
# --------------------------------------------------------------------------

DEFAULT_ROWS = (("no_at", {"mode": "no_at"}), ("pat", {"mode": "pat"}), ("wapat", {"mode": "wapat"}))


@dataclass
class AblationCell:
    label: str
    seed: int
    result: EvalResult = None
    error: str = None

    @property
    def macro(self) -> float:
        return math.nan if self.result is None else self.result.macro_score

    @property
    def in_domain(self) -> float:
        return math.nan if self.result is None else self.result.in_domain


@dataclass
class AblationTable:
    labels: list
    cells: list = field(default_factory=list)

    def for_label(self, label: str) -> list:
        return [c for c in self.cells if c.label == label]

    def median(self, label: str, what: str = "macro") -> float:
        """Median over seeds that finished; NaN if none did."""
        vals = [getattr(c, what) for c in self.for_label(label) if c.result is not None]
        return float(np.median(vals)) if vals else math.nan

    def median_dataset(self, label: str, dataset: str) -> float:
        vals = [float(c.result.per_dataset[dataset]) for c in self.for_label(label)
                if c.result is not None and dataset in c.result.per_dataset]
        return float(np.median(vals)) if vals else math.nan

    def datasets(self) -> list:
        names = set()
        for c in self.cells:
            if c.result is not None:
                names |= set(c.result.per_dataset)
        return sorted(names)


def run_ablation(rows, base: TrainConfig, corpus: CorpusSpec, seeds, n_train: int = 400,
                 n_test: int = 100, vocab_size: int = None) -> AblationTable:
    """Train and evaluate every (row, seed) cell.

    ``rows`` is a sequence of ``(label, overrides)`` applied to ``base`` via
    ``TrainConfig.with_overrides``. Within a seed all rows share the corpus and
    the initial model state. A failing cell is recorded with its error and the
    rest of the matrix still runs.
    """
    rows = list(rows)
    table = AblationTable([label for label, _ in rows])
    vocab = Vocabulary.synthetic(vocab_size or corpus.vocab_size)
    for seed in seeds:
        spec = CorpusSpec(**{**{k: getattr(corpus, k) for k in corpus.__dataclass_fields__}, "seed": seed})
        bench = {k: v[0] for k, v in build_benchmark(spec, n_train, 1, n_test, base.frontend).items()
                 if k != VAL_SPLIT}
        suites = {k: v for k, v in bench.items() if k != TRAIN_SPLIT}
        seed_base = base.with_overrides(seed=seed)
        init = Trainer(seed_base, bench[TRAIN_SPLIT], len(vocab) + 1).state
        for label, overrides in rows:
            cell = AblationCell(label, seed)
            try:
                cfg = seed_base.with_overrides(**overrides)
                res = train(cfg, bench[TRAIN_SPLIT], len(vocab) + 1, state=init)
                cell.result = evaluate(res.state, suites, vocab, cfg.frontend, IN_DOMAIN)
                log.info("ablation %s seed %d: macro %.4f in-domain %.4f", label, seed,
                         cell.macro, cell.in_domain)
            except Exception as exc:  # one bad cell must not sink the matrix
                cell.error = f"{type(exc).__name__}: {exc}"
                log.warning("ablation %s seed %d failed: %s", label, seed, cell.error)
            table.cells.append(cell)
    return table


ABLATION_HEADER = ("row", "seeds_ok", "macro_wer_percent", "in_domain_wer_percent")


def format_ablation(table: AblationTable) -> str:
    """Median-over-seeds table: one line per row, per-dataset medians as extra columns."""
    datasets = [d for d in table.datasets() if d != IN_DOMAIN]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_HEADER + tuple(datasets))
    for label in table.labels:
        ok = sum(c.result is not None for c in table.for_label(label))
        row = [label, ok, _pct(table.median(label)), _pct(table.median(label, "in_domain"))]
        row += [_pct(table.median_dataset(label, d)) for d in datasets]
        writer.writerow(row)
    return buf.getvalue()


def _pct(x: float) -> str:
    return "n/a" if math.isnan(x) else f"{100.0 * x:.4f}"
