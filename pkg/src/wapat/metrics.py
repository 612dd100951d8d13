"""Word error rate, cross-domain macro score, drop rates and their CSV reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .adversary import pad_batch
from .ctc import greedy_decode
from .frontend import FrontendSpec, get_frontend
from .model import ModelState, forward

MACRO_ROW = "macro"


def edit_distance(ref, hyp) -> int:
    """Word-level Levenshtein distance with unit costs."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def _words(x):
    return x.split() if isinstance(x, str) else list(x)


def wer(ref, hyp) -> Fraction:
    ref, hyp = _words(ref), _words(hyp)
    if not ref:
        raise ValueError("reference transcript is empty")
    return Fraction(edit_distance(ref, hyp), len(ref))


def corpus_wer(pairs) -> Fraction:
    """Summed edit distance over summed reference length."""
    errors = total = 0
    for ref, hyp in pairs:
        ref, hyp = _words(ref), _words(hyp)
        errors += edit_distance(ref, hyp)
        total += len(ref)
    if total == 0:
        raise ValueError("no reference words")
    return Fraction(errors, total)


@dataclass
class EvalResult:
    per_dataset: dict
    in_domain_name: str = "test"
    failures: dict = field(default_factory=dict)

    @property
    def out_of_domain(self) -> list:
        return sorted(k for k in self.per_dataset if k != self.in_domain_name)

    @property
    def macro_score(self) -> float:
        names = self.out_of_domain
        if not names:
            return math.nan
        return float(np.mean([float(self.per_dataset[k]) for k in names]))

    @property
    def in_domain(self) -> float:
        value = self.per_dataset.get(self.in_domain_name)
        return math.nan if value is None else float(value)


def transcribe(state: ModelState, waveforms, frontend_spec: FrontendSpec = FrontendSpec(),
               batch_size: int = 64) -> list:
    """Greedy symbol-id hypotheses; ``None`` for utterances shorter than one window."""
    fe = get_frontend(frontend_spec)
    out = [None] * len(waveforms)
    ready = [(i, fe.tokenize(w).frames) for i, w in enumerate(waveforms)
             if len(w) >= frontend_spec.window]
    for lo in range(0, len(ready), batch_size):
        chunk = ready[lo:lo + batch_size]
        Z, lengths = pad_batch([z for _, z in chunk])
        logits, _ = forward(Z, state, lengths)
        for (i, _), lg, n in zip(chunk, logits, lengths):
            out[i] = greedy_decode(lg[:n])
    return out


def evaluate(state: ModelState, suites: dict, vocab, frontend_spec: FrontendSpec = FrontendSpec(),
             in_domain: str = "test") -> EvalResult:
    """Corpus-level WER per suite; ``suites`` maps name to a list of (Waveform, transcript-or-LabelSeq)."""
    if not suites:
        raise ValueError("no evaluation suites")
    per, failures = {}, {}
    for name in sorted(suites):
        items = suites[name]
        hyps = transcribe(state, [w for w, _ in items], frontend_spec)
        pairs, failed = [], 0
        for (_, ref), hyp in zip(items, hyps):
            ref_words = ref.words if hasattr(ref, "words") else ref
            if hyp is None:
                failed += 1
                hyp_words = ""
            else:
                hyp_words = vocab.decode(hyp)
            pairs.append((ref_words, hyp_words))
        per[name] = corpus_wer(pairs)
        failures[name] = failed
    return EvalResult(per, in_domain, failures)


def drop_rate(baseline: EvalResult, treated: EvalResult) -> dict:
    """Signed percent WER reduction per dataset and for the macro score; None where undefined."""
    if set(baseline.per_dataset) != set(treated.per_dataset):
        raise ValueError("baseline and treated results cover different suites")

    def pct(b, t):
        b, t = float(b), float(t)
        if b == 0.0 or math.isnan(b):
            return None
        return 100.0 * (b - t) / b

    out = {k: pct(baseline.per_dataset[k], treated.per_dataset[k]) for k in sorted(baseline.per_dataset)}
    out[MACRO_ROW] = pct(baseline.macro_score, treated.macro_score)
    return out


WER_HEADER = ("dataset", "wer_percent")
DROP_HEADER = ("dataset", "drop_percent")


def format_wer_report(result: EvalResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(WER_HEADER)
    for name in sorted(result.per_dataset):
        writer.writerow((name, f"{100.0 * float(result.per_dataset[name]):.4f}"))
    writer.writerow((MACRO_ROW, f"{100.0 * result.macro_score:.4f}"))
    return buf.getvalue()


def parse_wer_report(text: str, in_domain: str = "test") -> EvalResult:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != WER_HEADER:
        raise ValueError(f"report header must be {','.join(WER_HEADER)}")
    per = {name: Fraction(value) / 100 for name, value in rows[1:] if name != MACRO_ROW}
    return EvalResult(per, in_domain)


def format_drop_report(drops: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DROP_HEADER)
    for name, value in drops.items():
        writer.writerow((name, "n/a" if value is None else f"{value:+.2f}" if value else "+0.00"))
    return buf.getvalue()
