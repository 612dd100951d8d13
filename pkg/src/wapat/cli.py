"""Command line: generate, train, evaluate, report, plus augment/attack/ablate helpers.

Every command takes ``--config`` (TOML, see :mod:`wapat.config`); flags such
as ``--mode``, ``--epsilon``, ``--seed`` and ``--threads`` override single
fields. Failures print ``error: ...`` to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adversary import AttackConfig, pat_step, wapat_step
from .audio_io import WavFormatError, read_wav, write_wav
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config
from .datagen import IN_DOMAIN, Vocabulary, load_manifest
from .dsp_augment import KINDS, apply_transform, sample_transform
from .experiments import (DEFAULT_ROWS, TRAIN_SPLIT, build_benchmark, format_ablation, load_eval_suites,
                          load_split, manifest_paths, run_ablation, write_benchmark)
from .frontend import FrontendSpec
from .metrics import drop_rate, evaluate, format_drop_report, format_wer_report, parse_wer_report
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .trainer import MODES, Trainer, TrainingError

log = logging.getLogger("wapat")

CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train_log.jsonl"
WER_NAME = "wer.csv"
DROP_NAME = "drop.csv"

_EXPECTED = (ConfigError, CheckpointError, TrainingError, WavFormatError, FileNotFoundError, ValueError)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config({})
    return cfg.with_overrides(mode=getattr(args, "mode", None), epsilon=getattr(args, "epsilon", None),
                              seed=getattr(args, "seed", None), threads=getattr(args, "threads", None))


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    bench = build_benchmark(cfg.corpus, cfg.splits.n_train, cfg.splits.n_val, cfg.splits.n_test,
                            cfg.frontend)
    paths = write_benchmark(bench, out)
    (out / "config.toml").write_text(dump_config(cfg))
    for name, path in paths.items():
        print(f"{name}\t{len(bench[name][0])}\t{path}")
    return 0


def _frontend_from_meta(meta: dict) -> FrontendSpec:
    return FrontendSpec(**meta.get("config", {}).get("frontend", {}))


def cmd_train(args) -> int:
    cfg = _config(args)
    paths = manifest_paths(args.corpus)
    vocab = Vocabulary.from_transcripts(t for _, t in load_manifest(paths[TRAIN_SPLIT]))
    corpus = load_split(paths[TRAIN_SPLIT], vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train
    trainer = Trainer(tcfg, corpus, len(vocab) + 1)
    if trainer.skipped:
        log.warning("skipped %d utterances too short for their transcripts", trainer.skipped)
    result = trainer.run(progress_every=args.progress)
    final_clean = result.log[-1]["clean_loss"] if result.log else float("nan")
    meta = {"vocab": vocab.words, "config": cfg.to_dict(), "final_clean_loss": final_clean}
    state = replace(result.state, meta=meta)
    with open(out / LOG_NAME, "w") as fh:
        for record in result.log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    (out / "config.toml").write_text(dump_config(cfg))
    save_checkpoint(state, out / CHECKPOINT_NAME)
    summary = (f"mode={tcfg.mode} epsilon={tcfg.attack.epsilon:g} steps={tcfg.total_steps} "
               f"final_clean_loss={final_clean:.6f} skipped={result.skipped}")
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return 0


def cmd_evaluate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    if "vocab" not in state.meta:
        raise CheckpointError(f"{args.checkpoint}: checkpoint carries no vocabulary")
    vocab = Vocabulary(list(state.meta["vocab"]))
    suites = load_eval_suites(args.corpus)
    if not suites:
        raise FileNotFoundError(f"no evaluation manifests in {args.corpus}")
    result = evaluate(state, suites, vocab, _frontend_from_meta(state.meta), IN_DOMAIN)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = format_wer_report(result)
    (out / WER_NAME).write_text(report)
    sys.stdout.write(report)
    if args.baseline:
        baseline = parse_wer_report(Path(args.baseline).read_text(), IN_DOMAIN)
        # Compare at report precision so a model against its own report gives exact zeros.
        drops = format_drop_report(drop_rate(baseline, parse_wer_report(report, IN_DOMAIN)))
        (out / DROP_NAME).write_text(drops)
        sys.stdout.write(drops)
    return 0


def cmd_report(args) -> int:
    baseline = parse_wer_report(Path(args.baseline).read_text(), IN_DOMAIN)
    treated = parse_wer_report(Path(args.treated).read_text(), IN_DOMAIN)
    drops = drop_rate(baseline, treated)
    print(f"{'dataset':<14}{'baseline':>10}{'treated':>10}{'drop %':>9}")
    for name in sorted(baseline.per_dataset):
        d = drops[name]
        print(f"{name:<14}{100 * float(baseline.per_dataset[name]):>10.2f}"
              f"{100 * float(treated.per_dataset[name]):>10.2f}{'n/a' if d is None else f'{d:+.2f}':>9}")
    d = drops["macro"]
    print(f"{'macro':<14}{100 * baseline.macro_score:>10.2f}{100 * treated.macro_score:>10.2f}"
          f"{'n/a' if d is None else f'{d:+.2f}':>9}")
    if args.out:
        Path(args.out).write_text(format_drop_report(drops))
    return 0


def cmd_augment(args) -> int:
    w = read_wav(args.input)
    rng = np.random.default_rng(args.seed)
    kind = sample_transform(rng, tag=args.kind)
    write_wav(apply_transform(w, kind, rng), args.out)
    print(json.dumps({"kind": kind.tag, "params": _jsonable(kind.params)}, sort_keys=True))
    return 0


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = v.to_flat() if hasattr(v, "to_flat") else v
    return out


def cmd_attack(args) -> int:
    state = load_checkpoint(args.checkpoint)
    vocab = Vocabulary(list(state.meta.get("vocab", [])))
    y = vocab.encode(args.transcript)
    fe = _frontend_from_meta(state.meta)
    cfg = AttackConfig(epsilon=args.epsilon, guidance_weight=args.guidance_weight)
    x = read_wav(args.input)
    rng = np.random.default_rng(args.seed)
    if args.mode == "pat":
        z_hat = pat_step(x, y, state, cfg, rng, fe)
        diag = {"transform": None}
    else:
        z_hat, diag = wapat_step(x, y, state, cfg, rng, fe)
    if args.out:
        np.save(args.out, z_hat)
    print(json.dumps(diag, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows = list(DEFAULT_ROWS)
    for eps in args.epsilons or ():
        rows.append((f"wapat@{eps:g}", {"mode": "wapat", "epsilon": eps}))
    table = run_ablation(rows, cfg.train, cfg.corpus, args.seeds, cfg.splits.n_train, cfg.splits.n_test)
    text = format_ablation(table)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(text)
        with open(out / "ablation_cells.jsonl", "w") as fh:
            for c in table.cells:
                rec = {"row": c.label, "seed": c.seed, "error": c.error}
                if c.result is not None:
                    rec["wer"] = {k: float(v) for k, v in c.result.per_dataset.items()}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wapat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train_flags=True):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int)
        if train_flags:
            p.add_argument("--mode", choices=MODES)
            p.add_argument("--epsilon", type=float)
            p.add_argument("--threads", type=int)

    p = sub.add_parser("generate", help="write the synthetic benchmark as WAVs and manifests")
    common(p, train_flags=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on <corpus>/train.tsv")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--progress", type=int, default=0, help="log every N steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="WER per manifest, macro score, optional drop rates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", help="wer.csv of a baseline model")
    p.add_argument("--threads", type=int, help="accepted for symmetry; evaluation is sequential")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="side-by-side WER and drop-rate table from two wer.csv files")
    p.add_argument("--baseline", required=True)
    p.add_argument("--treated", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("augment", help="apply one random waveform transform to a WAV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("attack", help="one single-step adversary for a WAV and its transcript")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--transcript", required=True)
    p.add_argument("--mode", choices=("pat", "wapat"), default="wapat")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--guidance-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="save the adversarial frames as .npy")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("ablate", help="no_at / pat / wapat matrix over seeds, medians per row")
    common(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epsilons", type=float, nargs="*", help="extra wapat rows at these radii")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _EXPECTED as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
