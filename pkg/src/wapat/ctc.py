"""Connectionist Temporal Classification: loss, gradient, decoding and a brute-force oracle.

Logits are (T, V+1) with the blank in the last column. The batched routines
take zero-padded (B, T, V+1) arrays plus per-item lengths.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

NEG_INF = -np.inf


class CTCInfeasibleError(ValueError):
    """The target cannot be aligned to the available frames."""


@dataclass(frozen=True)
class LabelSeq:
    ids: tuple
    words: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not self.words:
            object.__setattr__(self, "words", " ".join(f"s{i}" for i in self.ids))

    def __len__(self):
        return len(self.ids)


def required_frames(ids) -> int:
    """Minimum frame count: one per label plus a blank between each adjacent repeat."""
    ids = list(ids)
    return len(ids) + sum(1 for a, b in zip(ids, ids[1:]) if a == b)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def frame_posteriors(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax."""
    shifted = np.asarray(logits) - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _ids(y) -> list:
    return list(y.ids) if isinstance(y, LabelSeq) else [int(i) for i in y]


@njit(cache=True)
def _lse(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def _ctc_item(logp, ext, grad_out):
    """Forward-backward over the blank-extended target; writes softmax - occupancy into grad_out."""
    T, C = logp.shape
    S = ext.shape[0]
    alpha = np.full((T, S), -np.inf)
    beta = np.full((T, S), -np.inf)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = _lse(acc, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != ext[s - 2]:
                acc = _lse(acc, alpha[t - 1, s - 2])
            if acc != -np.inf:
                alpha[t, s] = acc + logp[t, ext[s]]
    log_p = alpha[T - 1, S - 1]
    if S > 1:
        log_p = _lse(log_p, alpha[T - 1, S - 2])
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            acc = beta[t + 1, s] + logp[t + 1, ext[s]]
            if s + 1 < S:
                acc = _lse(acc, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
            if s + 2 < S and ext[s + 2] != ext[s]:
                acc = _lse(acc, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
            beta[t, s] = acc
    for t in range(T):
        for c in range(C):
            grad_out[t, c] = np.exp(logp[t, c])
        for s in range(S):
            v = alpha[t, s] + beta[t, s]
            if v != -np.inf:
                grad_out[t, ext[s]] -= np.exp(v - log_p)
    return -log_p


def ctc_forward_batch(logits: np.ndarray, lengths, targets):
    """Per-item CTC negative log-likelihoods and their gradients w.r.t. the logits.

    Returns ``(losses, grad)`` with ``losses`` of shape (B,) and ``grad`` shaped
    like ``logits``; padded frames get zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    B, T, C = logits.shape
    blank = C - 1
    lengths = np.asarray(lengths, dtype=np.int64)
    labels = [_ids(y) for y in targets]
    for b, ids in enumerate(labels):
        if any(i < 0 or i >= blank for i in ids):
            raise ValueError(f"item {b}: label ids must lie in [0, {blank})")
        if lengths[b] < max(1, required_frames(ids)):
            raise CTCInfeasibleError(
                f"item {b}: {lengths[b]} frames cannot hold {len(ids)} labels "
                f"(needs {required_frames(ids)})")

    logp = log_softmax(logits)
    losses = np.empty(B)
    grad = np.zeros_like(logits)
    for b, ids in enumerate(labels):
        ext = np.full(2 * len(ids) + 1, blank, dtype=np.int64)
        ext[1::2] = ids
        n = int(lengths[b])
        losses[b] = _ctc_item(logp[b, :n], ext, grad[b, :n])
    return losses, grad


def ctc_forward(logits: np.ndarray, y):
    """CTC loss ``-log P(y | logits)`` and its gradient w.r.t. the (T, V+1) logits."""
    logits = np.asarray(logits, dtype=np.float64)
    losses, grad = ctc_forward_batch(logits[None], [logits.shape[0]], [y])
    return float(losses[0]), grad[0]


def collapse(path, blank: int) -> tuple:
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(int(p))
        prev = p
    return tuple(out)


BRUTEFORCE_MAX_T = 8
BRUTEFORCE_MAX_V = 4


@lru_cache(maxsize=64)
def _path_table(T: int, C: int):
    paths = np.array(list(itertools.product(range(C), repeat=T)), dtype=np.int64).reshape(-1, T)
    groups: dict = {}
    for i, p in enumerate(paths):
        groups.setdefault(collapse(p, C - 1), []).append(i)
    return paths, {k: np.array(v) for k, v in groups.items()}


def ctc_bruteforce(logits: np.ndarray, y) -> float:
    """Reference CTC loss by summing every frame-label path that collapses to ``y``."""
    logits = np.asarray(logits, dtype=np.float64)
    T, C = logits.shape
    if T > BRUTEFORCE_MAX_T or C - 1 > BRUTEFORCE_MAX_V:
        raise ValueError(f"enumeration bound exceeded (T={T}, V={C - 1})")
    paths, groups = _path_table(T, C)
    members = groups.get(tuple(_ids(y)))
    if members is None:
        raise CTCInfeasibleError(f"no length-{T} path collapses to {tuple(_ids(y))}")
    logp = log_softmax(logits)
    path_scores = logp[np.arange(T)[None, :], paths[members]].sum(axis=1)
    top = np.max(path_scores)
    return float(-(top + np.log(np.sum(np.exp(path_scores - top)))))


def greedy_decode(logits: np.ndarray) -> list:
    """Best-path decoding: per-frame argmax, merge repeats, drop blanks."""
    logits = np.asarray(logits)
    return list(collapse(np.argmax(logits, axis=1), logits.shape[1] - 1))
