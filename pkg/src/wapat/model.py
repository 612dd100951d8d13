"""Small frame-level acoustic model with hand-written reverse mode, Adam and LR schedule.

Architecture, per frame t of a (T, d) input::

    h1 = tanh(z W1 + b1)                 d -> h
    c  = depthwise_conv5(h1) + bc        kernel 5, zero "same" padding
    h2 = tanh(c W2 + b2)                 h -> h
    logits = h2 W3 + b3                  h -> V + 1

Input frames first pass through a frozen affine map ``(z - shift) @ transform``
(identity by default, a whitening fitted on training data in practice); it
is not a parameter and gets no gradient.

Batched calls take zero-padded (B, T, d) input plus lengths; frames past an
item's length are masked to zero before the convolution so that padding
never leaks into valid frames.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

KERNEL = 5
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
WARMUP_FLOOR, DECAY_FLOOR = 0.01, 0.05

CHECKPOINT_MAGIC = b"WAPATCKP"
CHECKPOINT_VERSION = 1


class StaleTapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def make_layout(d: int, hidden: int, n_classes: int) -> tuple:
    return (("W1", (d, hidden)), ("b1", (hidden,)),
            ("K", (KERNEL, hidden)), ("bc", (hidden,)),
            ("W2", (hidden, hidden)), ("b2", (hidden,)),
            ("W3", (hidden, n_classes)), ("b3", (n_classes,)))


_PARAM_ORDER = ("W1", "b1", "K", "bc", "W2", "b2", "W3", "b3")


def _size(shape) -> int:
    return int(np.prod(shape))


def unpack(params: np.ndarray, layout) -> dict:
    out, offset = {}, 0
    for name, shape in layout:
        n = _size(shape)
        out[name] = params[offset:offset + n].reshape(shape)
        offset += n
    return out


def pack(parts: dict, layout) -> np.ndarray:
    return np.concatenate([np.asarray(parts[name], dtype=np.float64).reshape(-1) for name, _ in layout])


@dataclass(frozen=True)
class ModelState:
    params: np.ndarray
    layout: tuple
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0
    meta: dict = field(default_factory=dict, compare=False)
    input_shift: np.ndarray = None
    input_transform: np.ndarray = None

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        layout = tuple((str(k), tuple(int(x) for x in s)) for k, s in self.layout)
        n = sum(_size(s) for _, s in layout)
        if params.shape != (n,):
            raise ValueError(f"params length {params.size} does not match layout ({n})")
        d = layout[0][1][0]
        m = np.zeros(n) if self.adam_m is None else np.array(self.adam_m, dtype=np.float64)
        v = np.zeros(n) if self.adam_v is None else np.array(self.adam_v, dtype=np.float64)
        shift = np.zeros(d) if self.input_shift is None else np.array(self.input_shift, dtype=np.float64)
        transform = (np.eye(d) if self.input_transform is None
                     else np.array(self.input_transform, dtype=np.float64))
        if shift.shape != (d,) or transform.shape != (d, d) or not np.all(np.isfinite(transform)):
            raise ValueError("input normalization needs a length-d shift and a finite (d, d) transform")
        for arr in (params, m, v, shift, transform):
            arr.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "adam_m", m)
        object.__setattr__(self, "adam_v", v)
        object.__setattr__(self, "input_shift", shift)
        object.__setattr__(self, "input_transform", transform)
        object.__setattr__(self, "layout", layout)

    @property
    def input_dim(self) -> int:
        return self.layout[0][1][0]

    @property
    def n_classes(self) -> int:
        return self.layout[-1][1][0]

    def parts(self) -> dict:
        return unpack(self.params, self.layout)

    def equals(self, other: "ModelState") -> bool:
        return (self.layout == other.layout and self.step_count == other.step_count
                and np.array_equal(self.params, other.params)
                and np.array_equal(self.adam_m, other.adam_m)
                and np.array_equal(self.adam_v, other.adam_v)
                and np.array_equal(self.input_shift, other.input_shift)
                and np.array_equal(self.input_transform, other.input_transform))


def init_state(d: int, n_classes: int, hidden: int = 128, seed: int = 0,
               input_shift=None, input_transform=None) -> ModelState:
    """Random initial parameters.

    ``input_shift`` and ``input_transform`` set the frozen input map
    ``(z - shift) @ transform`` applied before the first affine layer; they
    are never trained (defaults: identity).
    """
    rng = np.random.default_rng(seed)
    layout = make_layout(d, hidden, n_classes)
    kernel = rng.normal(0.0, 0.1, (KERNEL, hidden))
    kernel[KERNEL // 2] += 1.0
    parts = {
        "W1": rng.normal(0.0, 1.0 / math.sqrt(d), (d, hidden)),
        "b1": np.zeros(hidden),
        "K": kernel,
        "bc": np.zeros(hidden),
        "W2": rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, hidden)),
        "b2": np.zeros(hidden),
        "W3": rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, n_classes)),
        "b3": np.zeros(n_classes),
    }
    return ModelState(pack(parts, layout), layout, input_shift=input_shift,
                      input_transform=input_transform)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


@dataclass
class Tape:
    params: np.ndarray
    layout: tuple
    z: np.ndarray
    mask: np.ndarray
    h1: np.ndarray
    c: np.ndarray
    h2: np.ndarray
    single: bool
    input_transform: np.ndarray


@njit(cache=True)
def _conv_same(x, kernel):
    """Depthwise 'same' convolution along axis 1 of (B, T, h), zero padded."""
    B, T, H = x.shape
    K = kernel.shape[0]
    half = K // 2
    out = np.zeros_like(x)
    for b in range(B):
        for t in range(T):
            for k in range(K):
                u = t + k - half
                if 0 <= u < T:
                    for j in range(H):
                        out[b, t, j] += kernel[k, j] * x[b, u, j]
    return out


@njit(cache=True)
def _conv_same_grad(x, kernel, dout):
    """Gradients of the depthwise conv w.r.t. its kernel and its input."""
    B, T, H = x.shape
    K = kernel.shape[0]
    half = K // 2
    dk = np.zeros_like(kernel)
    dx = np.zeros_like(x)
    for b in range(B):
        for t in range(T):
            for k in range(K):
                u = t + k - half
                if 0 <= u < T:
                    for j in range(H):
                        dk[k, j] += dout[b, t, j] * x[b, u, j]
                        dx[b, u, j] += kernel[k, j] * dout[b, t, j]
    return dk, dx


def _as_batch(z, lengths):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 2
    if single:
        z = z[None]
    B, T, _ = z.shape
    if lengths is None:
        lengths = np.full(B, T)
    mask = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
    return z, mask, single


def _forward_flat(zn, mask, W1, b1, K, bc, W2, b2, W3, b3):
    B, T, d = zn.shape
    H = W1.shape[1]
    h1 = zn.reshape(B * T, d) @ W1
    h1 += b1
    np.tanh(h1, out=h1)
    h1 *= mask.reshape(-1, 1)
    c = _conv_same(h1.reshape(B, T, H), K).reshape(B * T, H)
    c += bc
    h2 = c @ W2
    h2 += b2
    np.tanh(h2, out=h2)
    logits = h2 @ W3
    logits += b3
    return h1, c, h2, logits


@njit(cache=True)
def _backward_kernel(zn, mask, h1, c, h2, g, W1, K, W2, W3):
    N, H = h1.shape
    B, T, d = zn.shape
    m = mask.reshape(N)
    for i in range(N):
        for j in range(g.shape[1]):
            g[i, j] *= m[i]
    gW3 = np.dot(h2.T, g)
    gb3 = g.sum(axis=0)
    da2 = np.dot(g, W3.T)
    for i in range(N):
        for j in range(H):
            da2[i, j] *= 1.0 - h2[i, j] * h2[i, j]
    gW2 = np.dot(c.T, da2)
    gb2 = da2.sum(axis=0)
    dc = np.dot(da2, W2.T)
    gbc = dc.sum(axis=0)
    gK, dh1 = _conv_same_grad(h1.reshape(B, T, H), K, dc.reshape(B, T, H))
    da1 = dh1.reshape(N, H)
    for i in range(N):
        for j in range(H):
            da1[i, j] *= m[i] * (1.0 - h1[i, j] * h1[i, j])
    zf = zn.reshape(N, d)
    gW1 = np.dot(zf.T, da1)
    gb1 = da1.sum(axis=0)
    gz = np.dot(da1, W1.T)
    return gW1, gb1, gK, gbc, gW2, gb2, gW3, gb3, gz


def forward(z, state: ModelState, lengths=None):
    """Logits for (T, d) or padded (B, T, d) input. Returns ``(logits, tape)``."""
    z, mask, single = _as_batch(z, lengths)
    if z.shape[-1] != state.input_dim:
        raise ValueError(f"input width {z.shape[-1]} != model input width {state.input_dim}")
    p = state.parts()
    zn = np.ascontiguousarray((z - state.input_shift) @ state.input_transform)
    h1, c, h2, logits = _forward_flat(zn, mask, *(p[k] for k in _PARAM_ORDER))
    B, T = zn.shape[:2]
    logits = logits.reshape(B, T, -1)
    tape = Tape(state.params, state.layout, zn, mask, h1, c, h2, single, state.input_transform)
    return (logits[0] if single else logits), tape


def backward(tape: Tape, grad_logits):
    """Exact gradients of ``sum(grad_logits * logits)`` w.r.t. params (flat) and input."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if tape.single:
        g = g[None]
    if g.shape[:2] != tape.z.shape[:2] or g.shape[2] != tape.layout[-1][1][0]:
        raise StaleTapeError(f"gradient shape {g.shape} does not match the recorded forward pass")
    p = unpack(tape.params, tape.layout)
    B, T, d = tape.z.shape
    g = np.array(g.reshape(B * T, -1), order="C")
    *grads, gz = _backward_kernel(tape.z, tape.mask, tape.h1, tape.c, tape.h2, g,
                                  p["W1"], p["K"], p["W2"], p["W3"])
    grad_input = gz.reshape(B, T, d) @ tape.input_transform.T
    flat = pack(dict(zip(_PARAM_ORDER, grads)), tape.layout)
    return flat, (grad_input[0] if tape.single else grad_input)


# --------------------------------------------------------------------------
# Optimizer and schedule
# --------------------------------------------------------------------------


def adam_step(state: ModelState, grad_params, lr: float) -> ModelState:
    g = np.asarray(grad_params, dtype=np.float64)
    if g.shape != state.params.shape:
        raise ValueError(f"gradient shape {g.shape} != params shape {state.params.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("gradient contains non-finite entries; update rejected")
    t = state.step_count + 1
    m = BETA1 * state.adam_m + (1.0 - BETA1) * g
    v = BETA2 * state.adam_v + (1.0 - BETA2) * g * g
    m_hat = m / (1.0 - BETA1 ** t)
    v_hat = v / (1.0 - BETA2 ** t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return replace(state, params=params, adam_m=m, adam_v=v, step_count=t)


@dataclass(frozen=True)
class ScheduleSpec:
    lr_max: float = 3e-3
    phases: tuple = (0.1, 0.4, 0.5)
    total_steps: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(float(f) for f in self.phases))
        if self.lr_max <= 0:
            raise ValueError("lr_max must be positive")
        if len(self.phases) != 3 or any(f < 0 for f in self.phases):
            raise ValueError("phases must be three nonnegative fractions")
        if abs(sum(self.phases) - 1.0) > 1e-12:
            raise ValueError(f"phase fractions {self.phases} must sum to 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")

    def boundaries(self) -> tuple:
        warm = int(round(self.phases[0] * self.total_steps))
        hold = int(round((self.phases[0] + self.phases[1]) * self.total_steps))
        return warm, hold


def lr_at(schedule: ScheduleSpec, step: int) -> float:
    """Tri-stage rate: linear warmup from 1% of peak, hold, exponential decay to 5%."""
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    warm, hold = schedule.boundaries()
    peak = schedule.lr_max
    if step < warm:
        return peak * (WARMUP_FLOOR + (1.0 - WARMUP_FLOOR) * step / warm)
    if step < hold:
        return peak
    span = schedule.total_steps - 1 - hold
    if span <= 0:
        return peak
    return peak * DECAY_FLOOR ** ((step - hold) / span)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def encode_checkpoint(state: ModelState) -> bytes:
    header = json.dumps({"layout": [[k, list(s)] for k, s in state.layout],
                         "step_count": state.step_count,
                         "meta": state.meta}, sort_keys=True).encode()
    body = b"".join(a.astype("<f8").tobytes() for a in (state.params, state.adam_m, state.adam_v,
                                                          state.input_shift,
                                                          state.input_transform.reshape(-1)))
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + body


def decode_checkpoint(blob: bytes) -> ModelState:
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos += 8
    header = json.loads(blob[pos:pos + hlen].decode())
    pos += hlen
    layout = tuple((k, tuple(s)) for k, s in header["layout"])
    n = sum(_size(s) for _, s in layout)
    d = layout[0][1][0]
    if len(blob) - pos != 8 * (3 * n + d + d * d):
        raise CheckpointError("checkpoint payload size does not match its layout")
    flat = np.frombuffer(blob, dtype="<f8", offset=pos).astype(np.float64)
    arrays = flat[:3 * n].reshape(3, n)
    return ModelState(arrays[0], layout, arrays[1], arrays[2], int(header["step_count"]),
                      header.get("meta", {}), flat[3 * n:3 * n + d], flat[3 * n + d:].reshape(d, d))


def save_checkpoint(state: ModelState, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(state))
    tmp.replace(path)


def load_checkpoint(path) -> ModelState:
    return decode_checkpoint(Path(path).read_bytes())
