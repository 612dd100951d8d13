"""Adversaries in the frontend's representation space (and a waveform-space baseline).

Single-utterance entry points (``pgd_attack``, ``pat_step``, ``wapat_step``)
are thin wrappers over the batched ``*_batch`` routines the trainer uses.
Batched arrays are zero-padded (B, T, d) with per-item lengths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform
from .ctc import CTCInfeasibleError, ctc_forward_batch, frame_posteriors, log_softmax, required_frames
from .dsp_augment import NoiseBank, apply_transform, sample_transform
from .frontend import FrontendSpec, PhonemeRepr, get_frontend
from .model import ModelState, backward, forward


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.01
    alpha: float = None
    steps: int = 1
    guidance: bool = True
    guidance_weight: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.epsilon))
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.steps == 1 and self.alpha > self.epsilon:
            raise ValueError("single-step attacks need alpha <= epsilon")


# --------------------------------------------------------------------------
# Ball machinery
# --------------------------------------------------------------------------


def _frames(z):
    return z.frames if isinstance(z, PhonemeRepr) else np.asarray(z, dtype=np.float64)


def uniform_init(z, epsilon: float, rng) -> np.ndarray:
    z = _frames(z)
    return z + rng.uniform(-epsilon, epsilon, size=z.shape)


def project_ball(candidate, center, epsilon: float) -> np.ndarray:
    center = _frames(center)
    return np.clip(_frames(candidate), center - epsilon, center + epsilon)


def pad_batch(seqs):
    """Stack (T_i, d) arrays into zero-padded (B, T_max, d) plus lengths."""
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    out = np.zeros((len(seqs), int(lengths.max()), seqs[0].shape[1]))
    for i, s in enumerate(seqs):
        out[i, :s.shape[0]] = s
    return out, lengths


def _frame_mask(lengths, T):
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None])[:, :, None]


# --------------------------------------------------------------------------
# Losses with input gradients
# --------------------------------------------------------------------------


def ctc_input_grad(Z, lengths, targets, state: ModelState, skip_infeasible: bool = False,
                   want_params: bool = False):
    """Per-item CTC losses and gradients w.r.t. the input frames (and optionally params).

    With ``skip_infeasible`` items whose target does not fit get loss NaN and
    zero gradient instead of raising.
    """
    lengths = np.asarray(lengths)
    ok = np.array([lengths[i] >= max(1, required_frames(targets[i].ids if hasattr(targets[i], "ids")
                                                         else targets[i]))
                   for i in range(len(targets))])
    if not ok.all() and not skip_infeasible:
        bad = int(np.flatnonzero(~ok)[0])
        raise CTCInfeasibleError(f"item {bad}: target does not fit {lengths[bad]} frames")
    logits, tape = forward(Z, state, lengths)
    losses = np.full(len(targets), np.nan)
    grad_logits = np.zeros_like(logits)
    idx = np.flatnonzero(ok)
    if idx.size:
        sub_losses, sub_grad = ctc_forward_batch(logits[idx], lengths[idx], [targets[i] for i in idx])
        losses[idx] = sub_losses
        grad_logits[idx] = sub_grad
    grad_params, grad_input = backward(tape, grad_logits)
    if want_params:
        return losses, grad_input, grad_params
    return losses, grad_input


def ctc_losses(Z, lengths, targets, state: ModelState) -> np.ndarray:
    """Per-item CTC losses without the backward pass."""
    logits, _ = forward(Z, state, lengths)
    return ctc_forward_batch(logits, lengths, targets)[0]


def wag_batch(Z1, len1, Z2, len2, state: ModelState):
    """Guidance term per item: minus the mean per-frame KL(p(z1) || p(z2)).

    Frames are truncated to min(T1, T2). The gradient flows through z1 only.
    """
    len1, len2 = np.asarray(len1), np.asarray(len2)
    logits1, tape = forward(Z1, state, len1)
    logits2, _ = forward(Z2, state, len2)
    T = min(logits1.shape[1], logits2.shape[1])
    common = np.minimum(len1, len2)
    mask = _frame_mask(common, T)
    logp = log_softmax(logits1[:, :T])
    logq = log_softmax(logits2[:, :T])
    p = np.exp(logp)
    kl = np.sum(p * (logp - logq), axis=-1, keepdims=True)
    kl = np.where(mask, kl, 0.0)
    denom = np.maximum(common, 1).astype(np.float64)
    values = -kl[..., 0].sum(axis=1) / denom
    grad_logits = np.zeros_like(logits1)
    grad_logits[:, :T] = np.where(mask, -p * (logp - logq - kl), 0.0) / denom[:, None, None]
    _, grad_input = backward(tape, grad_logits)
    return values, grad_input


def wag_loss(z1, z2, state: ModelState):
    """``-KL(p(z1) || p(z2))`` averaged over the shared frames, and its gradient w.r.t. z1."""
    z1, z2 = _frames(z1), _frames(z2)
    values, grad = wag_batch(z1[None], [z1.shape[0]], z2[None], [z2.shape[0]], state)
    return float(values[0]), grad[0]


def kl_frames(logits1, logits2) -> np.ndarray:
    """Per-frame KL(softmax(a) || softmax(b)); an independent route for tests."""
    p, q = frame_posteriors(logits1), frame_posteriors(logits2)
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


# --------------------------------------------------------------------------
# Attacks
# --------------------------------------------------------------------------


def pgd_batch(Z, lengths, targets, state: ModelState, cfg: AttackConfig, rngs):
    """l-inf PGD with random start in representation space, one rng per item."""
    mask = _frame_mask(lengths, Z.shape[1])
    x = np.stack([uniform_init(Z[i], cfg.epsilon, rngs[i]) for i in range(len(rngs))])
    x = np.where(mask, x, Z)
    for _ in range(cfg.steps):
        _, grad = ctc_input_grad(x, lengths, targets, state)
        x = project_ball(x + cfg.alpha * np.sign(grad), Z, cfg.epsilon)
    return x


def pat_batch(Z, lengths, targets, state: ModelState, cfg: AttackConfig, rngs):
    """Single-step phoneme-space attack: project(z0 + alpha * sign(grad L_ctc(z0)))."""
    return pgd_batch(Z, lengths, targets, state, AttackConfig(cfg.epsilon, cfg.alpha, 1, False), rngs)


def wapat_batch(Z, lengths, targets, Za, lengths_a, state: ModelState, cfg: AttackConfig, rngs,
                Z0=None):
    """Augmentation-guided single-step attack for a batch.

    ``Za`` holds the tokenized augmented utterances. Returns ``(z_hat, info)``
    where ``info`` carries per-item CTC loss at z0, the guidance value and the
    guidance gradient.
    """
    eps, step, lam = cfg.epsilon, cfg.alpha, cfg.guidance_weight
    mask = _frame_mask(lengths, Z.shape[1])
    if Z0 is None:
        Z0 = np.stack([uniform_init(Z[i], eps, rngs[i]) for i in range(len(rngs))])
    Z0 = np.where(mask, Z0, Z)
    loss0, eta1 = ctc_input_grad(Z0, lengths, targets, state)
    _, eta2 = ctc_input_grad(Za, lengths_a, targets, state, skip_infeasible=True)
    c1 = Z0 + eps * np.sign(eta1)
    c2 = Za + eps * np.sign(eta2)
    wag_values, wag_grad = wag_batch(c1, lengths, c2, lengths_a, state)
    delta = eta1 + lam * wag_grad
    z_hat = project_ball(Z0 + step * np.sign(delta), Z, eps)
    return z_hat, {"loss_z0": loss0, "wag": wag_values, "delta": delta}


def _tokenize_frames(x: Waveform, frontend_spec: FrontendSpec) -> np.ndarray:
    return get_frontend(frontend_spec).tokenize(x).frames


def pgd_attack(inp, y, state: ModelState, cfg: AttackConfig, rng,
               frontend_spec: FrontendSpec = FrontendSpec()):
    """PGD with random start.

    ``inp`` may be a representation (array or PhonemeRepr), attacked directly,
    or a Waveform, attacked in sample space through the frozen frontend; the
    return type follows the input.
    """
    if isinstance(inp, Waveform):
        return _pgd_waveform(inp, y, state, cfg, rng, frontend_spec)
    z = _frames(inp)
    out = pgd_batch(z[None], [z.shape[0]], [y], state, cfg, [rng])[0]
    return PhonemeRepr(out, inp.frame_hop_ms) if isinstance(inp, PhonemeRepr) else out


def waveform_input_grad(x: np.ndarray, y, state: ModelState, frontend_spec: FrontendSpec):
    fe = get_frontend(frontend_spec)
    z = fe.tokenize(x).frames
    loss, gz = ctc_input_grad(z[None], [z.shape[0]], [y], state)
    return float(loss[0]), fe.vjp(x, gz[0])


def _pgd_waveform(w: Waveform, y, state, cfg, rng, frontend_spec):
    center = w.samples
    x = np.clip(uniform_init(center, cfg.epsilon, rng), -1.0, 1.0)
    for _ in range(cfg.steps):
        _, grad = waveform_input_grad(x, y, state, frontend_spec)
        x = np.clip(project_ball(x + cfg.alpha * np.sign(grad), center, cfg.epsilon), -1.0, 1.0)
    return w.with_samples(x)


def pat_step(x: Waveform, y, state: ModelState, cfg: AttackConfig, rng,
             frontend_spec: FrontendSpec = FrontendSpec()) -> np.ndarray:
    """Single-step attack on tokenize(x) without guidance."""
    z = _tokenize_frames(x, frontend_spec)
    return pat_batch(z[None], [z.shape[0]], [y], state, cfg, [rng])[0]


def wapat_step(x: Waveform, y, state: ModelState, cfg: AttackConfig, rng,
               frontend_spec: FrontendSpec = FrontendSpec(), noise_bank: NoiseBank = None):
    """One augmentation-guided adversary for a single utterance.

    The rng is consumed in order: random start, augmentation draw, per-item
    augmentation randomness. Returns ``(z_hat, diagnostics)``.
    """
    fe = get_frontend(frontend_spec)
    z = fe.tokenize(x).frames
    z0 = uniform_init(z, cfg.epsilon, rng)
    kind = sample_transform(rng)
    za = fe.tokenize(apply_transform(x, kind, rng, noise_bank)).frames
    z_hat, info = wapat_batch(z[None], [z.shape[0]], [y], za[None], [za.shape[0]],
                              state, cfg, [None], Z0=z0[None])
    z_hat = z_hat[0]
    adv_loss, _ = ctc_input_grad(z_hat[None], [z.shape[0]], [y], state)
    clean_loss, _ = ctc_input_grad(z[None], [z.shape[0]], [y], state)
    diagnostics = {
        "transform": kind.tag,
        "clean_loss": float(clean_loss[0]),
        "init_loss": float(info["loss_z0"][0]),
        "adv_loss": float(adv_loss[0]),
        "wag": float(info["wag"][0]),
        "delta_linf": float(np.max(np.abs(info["delta"][0]))),
        "perturbation_linf": float(np.max(np.abs(z_hat - z))),
    }
    return z_hat, diagnostics
