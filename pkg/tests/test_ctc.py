import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wapat.ctc import (CTCInfeasibleError, LabelSeq, ctc_bruteforce, ctc_forward, ctc_forward_batch,
                       frame_posteriors, greedy_decode, log_softmax, required_frames)


def random_instance(rng, max_t=8, max_v=4, V=None):
    V = int(rng.integers(1, max_v + 1)) if V is None else V
    T = int(rng.integers(1, max_t + 1))
    while True:
        L = int(rng.integers(0, T + 1))
        y = [int(i) for i in rng.integers(0, V, L)]
        if required_frames(y) <= T:
            break
    logits = rng.normal(0.0, 2.0, (T, V + 1))
    return logits, y


class TestForward:
    def test_single_frame_uniform(self):
        loss, _ = ctc_forward(np.zeros((1, 3)), [0])
        assert loss == pytest.approx(math.log(3), abs=1e-12)

    def test_two_frames_three_paths(self):
        # aa, a-blank, blank-a each with probability 1/9
        loss, _ = ctc_forward(np.zeros((2, 3)), [0])
        assert loss == pytest.approx(math.log(3), abs=1e-12)

    def test_repeat_needs_blank(self):
        with pytest.raises(CTCInfeasibleError):
            ctc_forward(np.zeros((1, 3)), [0, 0])
        with pytest.raises(CTCInfeasibleError):
            ctc_forward(np.zeros((2, 3)), [0, 0])
        assert np.isfinite(ctc_forward(np.zeros((3, 3)), [0, 0])[0])

    def test_blank_in_target_rejected(self):
        with pytest.raises(ValueError):
            ctc_forward(np.zeros((3, 3)), [2])

    def test_empty_target_is_all_blank(self):
        logits = np.random.default_rng(0).normal(size=(4, 3))
        loss, _ = ctc_forward(logits, [])
        assert loss == pytest.approx(-log_softmax(logits)[:, -1].sum(), rel=1e-12)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(1)
        for _ in range(250):
            logits, y = random_instance(rng)
            loss, _ = ctc_forward(logits, y)
            ref = ctc_bruteforce(logits, y)
            assert abs(loss - ref) <= 1e-9 * max(1.0, abs(ref))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(2)
        h = 1e-5
        for _ in range(100):
            logits, y = random_instance(rng, max_t=6, max_v=3)
            _, grad = ctc_forward(logits, y)
            num = np.zeros_like(logits)
            for idx in np.ndindex(logits.shape):
                e = np.zeros_like(logits)
                e[idx] = h
                num[idx] = (ctc_forward(logits + e, y)[0] - ctc_forward(logits - e, y)[0]) / (2 * h)
            assert np.max(np.abs(num - grad)) <= 1e-4 * max(1.0, np.max(np.abs(grad)))

    def test_gradient_rows_sum_to_zero(self):
        logits, y = random_instance(np.random.default_rng(3))
        _, grad = ctc_forward(logits, y)
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        items = [random_instance(rng, V=2) for _ in range(5)]
        T = max(lg.shape[0] for lg, _ in items)
        batch = np.zeros((5, T, 3))
        for i, (lg, _) in enumerate(items):
            batch[i, :lg.shape[0]] = lg
        losses, grads = ctc_forward_batch(batch, [lg.shape[0] for lg, _ in items], [y for _, y in items])
        for i, (lg, y) in enumerate(items):
            loss, g = ctc_forward(lg, y)
            assert losses[i] == loss
            assert np.array_equal(grads[i, :lg.shape[0]], g)
            assert np.all(grads[i, lg.shape[0]:] == 0)

    def test_long_sequence_stable(self):
        logits = np.random.default_rng(5).normal(0, 5, (2000, 11))
        loss, grad = ctc_forward(logits, list(range(10)) * 20)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_appending_blank_frame_bound(self, seed):
        rng = np.random.default_rng(seed)
        logits, y = random_instance(rng, max_t=7)
        extra = rng.normal(0, 2, (1, logits.shape[1]))
        extra[0, -1] = np.max(extra) + rng.uniform(0, 5)  # a frame whose argmax is blank
        before = ctc_forward(logits, y)[0]
        after = ctc_forward(np.vstack([logits, extra]), y)[0]
        assert after <= before - log_softmax(extra)[0, -1] + 1e-9


class TestBruteforce:
    def test_infeasible_signalled(self):
        with pytest.raises(CTCInfeasibleError):
            ctc_bruteforce(np.zeros((2, 3)), [1, 1])

    def test_bound_enforced(self):
        with pytest.raises(ValueError):
            ctc_bruteforce(np.zeros((9, 3)), [0])
        with pytest.raises(ValueError):
            ctc_bruteforce(np.zeros((3, 6)), [0])

    def test_single_dominant_path(self):
        logits = np.full((3, 3), -60.0)
        for t, k in enumerate([0, 2, 1]):
            logits[t, k] = 60.0
        assert ctc_bruteforce(logits, [0, 1]) < 1e-40
        assert ctc_forward(logits, [0, 1])[0] < 1e-40


class TestDecode:
    def test_all_blank(self):
        logits = np.zeros((4, 3))
        logits[:, 2] = 1.0
        assert greedy_decode(logits) == []

    @pytest.mark.parametrize("path, expected", [([0, 0, 2, 0], [0, 0]), ([2, 1, 1, 1, 2], [1])])
    def test_collapse(self, path, expected):
        logits = np.eye(3)[path]
        assert greedy_decode(logits) == expected

    def test_ties_take_lowest_index(self):
        assert greedy_decode(np.zeros((1, 3))) == [0]

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(0, 3), max_size=6))
    def test_path_realizing_target_decodes_to_it(self, y):
        path = []
        for i, k in enumerate(y):
            if i and y[i - 1] == k:
                path.append(4)
            path += [k, k]
        logits = np.eye(5)[path] if path else np.eye(5)[[4]]
        assert greedy_decode(logits) == y


class TestPosteriors:
    def test_zero_row_uniform(self):
        np.testing.assert_allclose(frame_posteriors(np.zeros((2, 4))), 0.25, rtol=1e-15)

    def test_saturation(self):
        p = frame_posteriors(np.array([[100.0, 0.0, 0.0]]))
        assert p[0, 0] >= 1 - 1e-12

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
    def test_rows_and_shift_invariance(self, seed, c):
        x = np.random.default_rng(seed).normal(0, 10, (5, 6))
        p = frame_posteriors(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(frame_posteriors(x + c), p, atol=1e-12)


def test_labelseq_words_default():
    assert LabelSeq([3, 1]).words == "s3 s1"
    assert required_frames([1, 1, 2, 2]) == 6
