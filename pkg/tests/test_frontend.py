import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wapat.audio_io import Waveform
from wapat.frontend import LOG_FLOOR, Frontend, FrontendSpec, get_frontend, tokenize

SPEC = FrontendSpec()


def test_silence_gives_constant_floor_frames():
    fe = get_frontend(SPEC)
    z = fe.tokenize(Waveform(np.zeros(4000))).frames
    expected = np.full(SPEC.n_mels, np.log(LOG_FLOOR)) @ fe.projection
    assert np.all(z == z[0])
    np.testing.assert_allclose(z[0], expected, rtol=1e-12)


def test_frozen_determinism():
    x = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 8000))
    a = tokenize(x, SPEC).frames
    b = Frontend(FrontendSpec()).tokenize(x).frames
    assert np.array_equal(a, b)


def test_one_second_frame_count():
    z = tokenize(Waveform(np.random.default_rng(1).uniform(-0.1, 0.1, 16000)))
    assert z.frames.shape == (98, 32)
    assert z.frame_hop_ms == 10.0


def test_shorter_than_window_rejected():
    with pytest.raises(ValueError, match="shorter"):
        tokenize(Waveform(np.zeros(399)))


def test_projection_scale():
    fe = get_frontend(FrontendSpec(projection_seed=3))
    p = fe.projection
    assert p.shape == (80, 32)
    assert abs(np.std(p) * np.sqrt(80) - 1.0) < 0.05
    assert not p.flags.writeable


@settings(max_examples=40, deadline=None)
@given(st.integers(400, 6000))
def test_frame_count_formula(n):
    z = tokenize(Waveform(np.random.default_rng(n).uniform(-0.2, 0.2, n))).frames
    assert z.shape[0] == 1 + (n - 400) // 160 == SPEC.frame_count(n)
    assert np.all(np.isfinite(z))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.99), st.integers(0, 2**32 - 1))
def test_gain_shifts_log_mel(c, seed):
    fe = get_frontend(SPEC)
    x = np.random.default_rng(seed).uniform(-1, 1, 2000)
    a, b = fe.log_mel(Waveform(x)), fe.log_mel(Waveform(c * x))
    np.testing.assert_allclose(b - a, 2 * np.log(c), atol=1e-6)


def test_single_sample_perturbation_is_small():
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.uniform(-0.5, 0.5, 3000)
        y = x.copy()
        y[rng.integers(3000)] += 1e-6
        assert np.max(np.abs(tokenize(Waveform(x)).frames - tokenize(Waveform(y)).frames)) <= 1e-2


def test_vjp_matches_finite_differences():
    fe = get_frontend(SPEC)
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.5, 0.5, 1200)
    g = rng.standard_normal((fe.spec.frame_count(1200), SPEC.d))
    analytic = fe.vjp(x, g)
    h = 1e-6
    for i in rng.choice(1200, 25, replace=False):
        e = np.zeros_like(x)
        e[i] = h
        numeric = (np.sum(g * fe.tokenize(x + e).frames) - np.sum(g * fe.tokenize(x - e).frames)) / (2 * h)
        assert numeric == pytest.approx(analytic[i], rel=1e-5, abs=1e-6)


def test_invalid_specs():
    with pytest.raises(ValueError):
        FrontendSpec(n_mels=0)
    with pytest.raises(ValueError):
        FrontendSpec(hop_ms=0.0)
