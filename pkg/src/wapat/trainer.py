"""Training loop for clean, phoneme-adversarial, guided, and waveform-adversarial modes.

Randomness is split into counter-based streams keyed by (seed, stream, step,
item), so results do not depend on thread count or on how many draws another
stream made. That is what makes ``pat`` at epsilon 0 retrace ``no_at``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .adversary import (AttackConfig, ctc_input_grad, ctc_losses, pad_batch, pat_batch, pgd_attack,
                        wapat_batch)
from .ctc import required_frames
from .dsp_augment import NoiseBank, apply_transform, default_noise_bank, make_rir, sample_transform
from .frontend import FrontendSpec, get_frontend
from .model import ModelState, ScheduleSpec, adam_step, init_state, lr_at

log = logging.getLogger(__name__)

MODES = ("no_at", "pat", "wapat", "waveform_at")
STREAM_INIT, STREAM_DATA, STREAM_ATTACK, STREAM_AUG = 0, 1, 2, 3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "wapat"
    attack: AttackConfig = AttackConfig()
    schedule: ScheduleSpec = ScheduleSpec()
    batch_seconds: float = 20.0
    seed: int = 0
    hidden: int = 128
    waveform_steps: int = 5
    threads: int = 1
    frontend: FrontendSpec = FrontendSpec()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not in {MODES}")
        if self.batch_seconds <= 0:
            raise ValueError("batch_seconds must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def total_steps(self) -> int:
        return self.schedule.total_steps

    def with_overrides(self, **kw) -> "TrainConfig":
        """Return a copy; ``epsilon``, ``total_steps`` and ``lr_max`` reach into nested records."""
        attack, schedule = self.attack, self.schedule
        if "epsilon" in kw:
            eps = float(kw.pop("epsilon"))
            attack = replace(attack, epsilon=eps, alpha=eps)
        if "guidance_weight" in kw:
            attack = replace(attack, guidance_weight=float(kw.pop("guidance_weight")))
        if "total_steps" in kw:
            schedule = replace(schedule, total_steps=int(kw.pop("total_steps")))
        if "lr_max" in kw:
            schedule = replace(schedule, lr_max=float(kw.pop("lr_max")))
        return replace(self, attack=attack, schedule=schedule, **kw)


@dataclass
class TrainResult:
    state: ModelState
    log: list = field(default_factory=list)
    skipped: int = 0


def stream(seed: int, kind: int, *counters) -> np.random.Generator:
    return np.random.default_rng([int(seed), kind, *[int(c) for c in counters]])


def batch_transform(seed: int, step: int):
    """The single augmentation shared by every item of batch ``step``."""
    return sample_transform(stream(seed, STREAM_AUG, step))


WHITEN_FLOOR = 1e-6


def input_statistics(frames) -> tuple:
    """Mean and symmetric whitening matrix of the frames, for the model's frozen input map.

    Eigenvalues below ``WHITEN_FLOOR`` times the largest are floored.
    """
    allz = np.concatenate(list(frames), axis=0)
    mean = allz.mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(allz - mean, rowvar=False))
    evals = np.maximum(evals, 0.0) + WHITEN_FLOOR * max(float(evals.max()), 1e-12)
    return mean, (evecs / np.sqrt(evals)) @ evecs.T


def initial_state(cfg: TrainConfig, n_classes: int, frames) -> ModelState:
    shift, transform = input_statistics(frames)
    seed = int(stream(cfg.seed, STREAM_INIT).integers(2**63))
    return init_state(cfg.frontend.d, n_classes, cfg.hidden, seed=seed, input_shift=shift,
                      input_transform=transform)


def batch_plan(durations, batch_seconds: float, total_steps: int, seed: int):
    """Index lists for each step: shuffled epochs packed up to ``batch_seconds`` of audio."""
    plan, epoch, current, current_s = [], 0, [], 0.0
    while len(plan) < total_steps:
        order = stream(seed, STREAM_DATA, epoch).permutation(len(durations))
        epoch += 1
        for i in order:
            if current and current_s + durations[i] > batch_seconds:
                plan.append(current)
                current, current_s = [], 0.0
                if len(plan) == total_steps:
                    break
            current.append(int(i))
            current_s += durations[i]
    return plan


class Trainer:
    """Owns the model state for one run; corpora are pre-tokenized once."""

    def __init__(self, cfg: TrainConfig, corpus, n_classes: int, noise_bank: NoiseBank = None,
                 state: ModelState = None):
        self.cfg = cfg
        self.frontend = get_frontend(cfg.frontend)
        self.noise_bank = noise_bank or default_noise_bank()
        self.n_classes = n_classes
        self.items, self.skipped = [], 0
        for w, y in corpus:
            T = cfg.frontend.frame_count(len(w))
            if T < max(1, required_frames(y.ids)):
                self.skipped += 1
                continue
            self.items.append((w, y))
        if not self.items:
            raise TrainingError("no CTC-feasible utterances in the training corpus")
        self.clean = self._map(lambda it: self.frontend.tokenize(it[0]).frames, self.items)
        self.state = state if state is not None else initial_state(cfg, n_classes, self.clean)

    def _map(self, fn, seq):
        if self.cfg.threads == 1:
            return [fn(s) for s in seq]
        with ThreadPoolExecutor(self.cfg.threads) as pool:
            return list(pool.map(fn, seq))

    def _augmented(self, idx, step):
        kind = batch_transform(self.cfg.seed, step)
        rir = make_rir(kind.params["room"]) if kind.tag == "reverb" else None

        def one(pair):
            j, i = pair
            w = self.items[i][0]
            xa = apply_transform(w, kind, stream(self.cfg.seed, STREAM_AUG, step, j + 1),
                                 self.noise_bank, rir=rir)
            if len(xa) < self.cfg.frontend.window:
                xa = xa.with_samples(np.pad(xa.samples, (0, self.cfg.frontend.window - len(xa))))
            return self.frontend.tokenize(xa).frames

        return kind, self._map(one, list(enumerate(idx)))

    def adversarial_batch(self, idx, step):
        """Training inputs for one step plus a log fragment."""
        cfg = self.cfg
        targets = [self.items[i][1] for i in idx]
        Z, lengths = pad_batch([self.clean[i] for i in idx])
        rngs = [stream(cfg.seed, STREAM_ATTACK, step, j) for j in range(len(idx))]
        info = {"transform": None, "wag_term": None}
        if cfg.mode == "no_at":
            return Z, lengths, targets, info
        if cfg.mode == "pat":
            return pat_batch(Z, lengths, targets, self.state, cfg.attack, rngs), lengths, targets, info
        if cfg.mode == "wapat":
            kind, aug = self._augmented(idx, step)
            Za, len_a = pad_batch(aug)
            z_hat, extra = wapat_batch(Z, lengths, targets, Za, len_a, self.state, cfg.attack, rngs)
            info.update(transform=kind.tag, wag_term=float(np.mean(extra["wag"])))
            return z_hat, lengths, targets, info
        wave_cfg = AttackConfig(cfg.attack.epsilon, cfg.attack.epsilon / 4.0 if cfg.waveform_steps > 1
                                else cfg.attack.epsilon, cfg.waveform_steps, False)

        def attack(j):
            w, y = self.items[idx[j]]
            xadv = pgd_attack(w, y, self.state, wave_cfg, rngs[j], cfg.frontend)
            return self.frontend.tokenize(xadv).frames

        adv = self._map(attack, range(len(idx)))
        Zw, _ = pad_batch(adv)
        return Zw, lengths, targets, info

    def step(self, idx, step):
        cfg = self.cfg
        Zt, lengths, targets, info = self.adversarial_batch(idx, step)
        losses, _, grad = ctc_input_grad(Zt, lengths, targets, self.state, want_params=True)
        adv_loss = float(np.mean(losses))
        if cfg.mode == "no_at":
            clean_loss = adv_loss
        else:
            Z, _ = pad_batch([self.clean[i] for i in idx])
            clean_loss = float(np.mean(ctc_losses(Z, lengths, targets, self.state)))
        if not (math.isfinite(adv_loss) and math.isfinite(clean_loss)):
            raise TrainingError(f"non-finite loss at step {step}: adv={adv_loss} clean={clean_loss} "
                                f"batch={list(idx)}")
        lr = lr_at(cfg.schedule, step)
        self.state = adam_step(self.state, grad / len(idx), lr)
        return {"step": step, "lr": lr, "mode": cfg.mode, "transform": info["transform"],
                "clean_loss": clean_loss, "adv_loss": adv_loss, "wag_term": info["wag_term"]}

    def run(self, progress_every: int = 0) -> TrainResult:
        cfg = self.cfg
        durations = [w.duration_s for w, _ in self.items]
        plan = batch_plan(durations, cfg.batch_seconds, cfg.total_steps, cfg.seed)
        records = []
        with threadpool_limits(limits=1):
            for step, idx in enumerate(plan):
                records.append(self.step(idx, step))
                if progress_every and (step + 1) % progress_every == 0:
                    log.info("step %d clean %.4f adv %.4f", step + 1, records[-1]["clean_loss"],
                             records[-1]["adv_loss"])
        return TrainResult(self.state, records, self.skipped)


def train(cfg: TrainConfig, corpus, n_classes: int, noise_bank: NoiseBank = None,
          state: ModelState = None) -> TrainResult:
    if cfg.total_steps == 0:
        trainer = Trainer(cfg, corpus, n_classes, noise_bank, state)
        return TrainResult(trainer.state, [], trainer.skipped)
    return Trainer(cfg, corpus, n_classes, noise_bank, state).run()


def mean_loss(state: ModelState, corpus, frontend_spec: FrontendSpec = FrontendSpec()) -> float:
    """Mean clean CTC loss over a corpus (feasible items only)."""
    fe = get_frontend(frontend_spec)
    zs, ys = [], []
    for w, y in corpus:
        z = fe.tokenize(w).frames
        if z.shape[0] >= max(1, required_frames(y.ids)):
            zs.append(z)
            ys.append(y)
    Z, lengths = pad_batch(zs)
    return float(np.mean(ctc_losses(Z, lengths, ys, state)))
