import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wapat.audio_io import Waveform
from wapat.dsp_augment import (BAND_MAX_WIDTH_HZ, KINDS, PITCH_CENTS_RANGE, SNR_DB_RANGE, AugmentKind, NoiseBank,
                               RoomSpec, add_noise, apply_mask, apply_transform, band_reject,
                               direct_delay_samples, draw_mask_intervals, fit_noise, image_count_bound, make_rir,
                               noise_gain, pitch_shift, random_room, reverb, rms, sample_transform, time_mask)

RATE = 16000


def tone(freq, n=16000, amp=0.5, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / RATE + phase)


def peak_hz(x):
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    return np.fft.rfftfreq(x.size, 1.0 / RATE)[np.argmax(spec)]


class TestPitch:
    def test_zero_cents_identity(self):
        x = np.random.default_rng(0).uniform(-0.3, 0.3, 5000)
        y = pitch_shift(Waveform(x), 0.0)
        assert np.max(np.abs(y.samples - x)) <= 1e-6

    def test_up_300_cents_on_tone(self):
        y = pitch_shift(Waveform(tone(100.0, 32000)), 300.0)
        assert peak_hz(y.samples) == pytest.approx(100 * 2 ** 0.25, abs=0.6)

    def test_down_300_cents_length(self):
        assert len(pitch_shift(Waveform(np.zeros(16000)), -300.0)) == round(16000 * 2 ** 0.25) == 19027

    @pytest.mark.parametrize("cents", [-300.1, 300.1, 1200.0])
    def test_range(self, cents):
        with pytest.raises(ValueError):
            pitch_shift(Waveform(np.zeros(100)), cents)


class TestAddNoise:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.w = Waveform(0.2 * rng.standard_normal(4000).clip(-4, 4))
        self.noise = Waveform(0.3 * rng.standard_normal(1500).clip(-3, 3))

    @pytest.mark.parametrize("snr, ratio", [(0.0, 1.0), (20.0, 0.1)])
    def test_scaled_noise_power(self, snr, ratio):
        fitted = fit_noise(self.noise, len(self.w))
        g = noise_gain(self.w.samples, fitted, snr)
        assert rms(g * fitted) == pytest.approx(ratio * rms(self.w.samples), rel=1e-9)

    def test_self_noise_doubles(self):
        out = add_noise(self.w, self.w, 0.0, clip=False)
        np.testing.assert_allclose(out.samples, 2 * self.w.samples, rtol=1e-12, atol=0)

    def test_clipped_to_unit(self):
        out = add_noise(Waveform(np.full(100, 0.9)), Waveform(np.ones(10)), 0.0)
        assert np.max(np.abs(out.samples)) <= 1.0

    def test_silent_signal_or_noise_rejected(self):
        with pytest.raises(ValueError, match="silent signal"):
            add_noise(Waveform(np.zeros(10)), self.noise, 10.0)
        with pytest.raises(ValueError, match="silent"):
            add_noise(self.w, Waveform(np.zeros(10)), 10.0)

    def test_snr_range(self):
        with pytest.raises(ValueError):
            add_noise(self.w, self.noise, 40.5)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(*SNR_DB_RANGE), st.integers(0, 2**32 - 1))
    def test_achieved_snr(self, snr, seed):
        rng = np.random.default_rng(seed)
        w = Waveform(rng.uniform(-0.5, 0.5, 800))
        noise = Waveform(rng.uniform(-1, 1, int(rng.integers(10, 2000))))
        out = add_noise(w, noise, snr, rng, clip=False)
        achieved = 20 * math.log10(rms(w.samples) / rms(out.samples - w.samples))
        assert abs(achieved - snr) <= 1e-6


class TestBandReject:
    def test_tone_at_center_removed(self):
        x = tone(1000.0)
        y = band_reject(Waveform(x), 1000.0, 150.0)
        assert rms(y.samples) <= 1e-6 * rms(x)

    def test_far_tone_passes(self):
        x = tone(3000.0)
        y = band_reject(Waveform(x), 1000.0, 150.0)
        assert rms(y.samples - x) <= 1e-6 * rms(x)

    def test_adjacent_notches_commute(self):
        x = np.random.default_rng(5).standard_normal(3000)
        w = Waveform(x)
        ab = band_reject(band_reject(w, 500.0, 100.0), 700.0, 100.0)
        ba = band_reject(band_reject(w, 700.0, 100.0), 500.0, 100.0)
        assert rms(ab.samples - ba.samples) <= 1e-9

    @pytest.mark.parametrize("center, width", [(50.0, 150.0), (7990.0, 100.0), (1000.0, 151.0), (1000.0, 0.0)])
    def test_band_outside_range(self, center, width):
        with pytest.raises(ValueError):
            band_reject(Waveform(np.zeros(100)), center, width)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(200.0, 7000.0), st.floats(1.0, BAND_MAX_WIDTH_HZ), st.integers(100, 5000),
           st.integers(0, 2**32 - 1))
    def test_bins_in_and_out(self, center, width, n, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, n)
        y = band_reject(Waveform(x), center, width)
        X, Y = np.fft.rfft(x), np.fft.rfft(y.samples)
        f = np.fft.rfftfreq(n, 1.0 / RATE)
        inside = (f >= center - width / 2) & (f <= center + width / 2)
        peak = np.max(np.abs(X))
        assert len(y) == n
        assert np.all(np.abs(Y[inside]) <= 1e-9 * peak)
        assert np.all(np.abs(Y[~inside] - X[~inside]) <= 1e-9 * np.maximum(np.abs(X[~inside]), peak * 1e-3))


class _ZeroLengths:
    """Stand-in rng whose draws put every mask at a random start with length 0."""

    def integers(self, hi):
        return 0


class TestTimeMask:
    def test_zero_lengths_identity(self):
        x = np.random.default_rng(0).standard_normal(500)
        ivs = draw_mask_intervals(500, RATE, _ZeroLengths())
        assert len(ivs) == 10 and all(length == 0 for _, length in ivs)
        assert np.array_equal(apply_mask(Waveform(x), ivs).samples, x)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 80000), st.integers(0, 2**32 - 1))
    def test_contract(self, n, seed):
        x = np.random.default_rng(seed).uniform(0.1, 1.0, n)
        ivs = draw_mask_intervals(n, RATE, np.random.default_rng(seed))
        assert len(ivs) == 10
        covered = np.zeros(n, dtype=bool)
        for start, length in ivs:
            assert 0 <= start < n and 0 <= length <= min(32000, n - start)
            covered[start:start + length] = True
        y = apply_mask(Waveform(x), ivs).samples
        assert np.all(y[covered] == 0.0)
        assert np.array_equal(y[~covered], x[~covered])
        assert covered.sum() <= min(n, 320000)
        assert np.array_equal(apply_mask(Waveform(y), ivs).samples, y)

    def test_seeded_draw_matches_intervals(self):
        x = np.random.default_rng(1).uniform(0.1, 1.0, 48000)
        a = time_mask(Waveform(x), np.random.default_rng(9)).samples
        b = apply_mask(Waveform(x), draw_mask_intervals(48000, RATE, np.random.default_rng(9))).samples
        assert np.array_equal(a, b)


class TestRir:
    def test_direct_path_only(self):
        room = RoomSpec((5, 4, 3), (1, 1, 1), (3, 2, 1.5), absorption=0.5, max_order=0)
        h = make_rir(room).samples
        assert np.flatnonzero(h).tolist() == [107]
        assert h[107] == 1.0

    def test_full_absorption_kills_reflections(self):
        base = dict(dims_m=(6, 5, 3), source_m=(1.5, 2, 1.2), mic_m=(4, 3.1, 1.7))
        a = make_rir(RoomSpec(**base, absorption=1.0, max_order=3)).samples
        b = make_rir(RoomSpec(**base, absorption=1.0, max_order=0)).samples
        assert np.array_equal(a, b)

    def test_first_tap_is_direct_path(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            room = random_room(rng, max_order=int(rng.integers(0, 4)))
            h = make_rir(room).samples
            expected = round(math.dist(room.source_m, room.mic_m) / 343.0 * RATE)
            assert np.flatnonzero(h)[0] == expected == direct_delay_samples(room)
            assert np.max(np.abs(h)) == 1.0
            assert np.count_nonzero(h) <= image_count_bound(room.max_order)

    @pytest.mark.parametrize("kw", [dict(dims_m=(0, 4, 3)), dict(source_m=(6, 1, 1)),
                                    dict(mic_m=(1, 1, 1)), dict(absorption=0.0)])
    def test_invalid_rooms(self, kw):
        base = dict(dims_m=(5, 4, 3), source_m=(1, 1, 1), mic_m=(3, 2, 1.5))
        with pytest.raises(ValueError):
            RoomSpec(**{**base, **kw})

    def test_flat_round_trip(self):
        room = RoomSpec((5, 4, 3), (1, 1, 1), (3, 2, 1.5), 0.3, 4)
        assert RoomSpec.from_flat(room.to_flat()) == room


class TestReverb:
    def test_unit_impulse(self):
        x = np.random.default_rng(2).uniform(-1, 1, 300)
        np.testing.assert_allclose(reverb(Waveform(x), Waveform([1.0])).samples, x, rtol=0, atol=1e-15)

    def test_one_sample_delay(self):
        x = np.random.default_rng(2).uniform(-1, 1, 300)
        y = reverb(Waveform(x), Waveform([0.0, 1.0])).samples
        assert y[0] == 0.0
        np.testing.assert_allclose(y[1:], x[:-1] * np.max(np.abs(x)) / np.max(np.abs(x[:-1])), rtol=1e-12)

    def test_tail_energy(self):
        x = np.zeros(16)
        x[0] = 1.0
        y = reverb(Waveform(x), Waveform([1.0, 0.0, 0.0, 0.5])).samples
        assert np.sum(y[1:] ** 2) > 0

    def test_long_rir_matches_direct_convolution(self):
        rng = np.random.default_rng(4)
        x, h = rng.uniform(-1, 1, 2000), rng.uniform(-1, 1, 500)
        wet = np.convolve(x, h)[:2000]
        expected = wet * np.max(np.abs(x)) / np.max(np.abs(wet))
        np.testing.assert_allclose(reverb(Waveform(x), Waveform(h)).samples, expected, atol=1e-12)


class TestSampling:
    def test_uniform_over_kinds(self):
        counts = dict.fromkeys(KINDS, 0)
        rng = np.random.default_rng(0)
        for _ in range(50000):
            counts[sample_transform(rng).tag] += 1
        for k in KINDS:
            assert 0.18 <= counts[k] / 50000 <= 0.22

    def test_deterministic(self):
        r1, r2 = np.random.default_rng(8), np.random.default_rng(8)
        assert [sample_transform(r1) for _ in range(50)] == [sample_transform(r2) for _ in range(50)]

    def test_parameters_in_range(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            k = sample_transform(rng)
            p = k.params
            if k.tag == "pitch":
                assert PITCH_CENTS_RANGE[0] <= p["cents"] <= PITCH_CENTS_RANGE[1]
            elif k.tag == "add":
                assert SNR_DB_RANGE[0] <= p["snr_db"] <= SNR_DB_RANGE[1]
            elif k.tag == "band_rej":
                assert 0.0 < p["width_hz"] <= BAND_MAX_WIDTH_HZ
            elif k.tag == "reverb":
                assert isinstance(p["room"], RoomSpec)

    def test_kind_validation(self):
        with pytest.raises(ValueError):
            AugmentKind("pitch", {"cents": 400.0})
        with pytest.raises(ValueError):
            AugmentKind("echo")
        with pytest.raises(ValueError):
            sample_transform(np.random.default_rng(0), tag="echo")

    @pytest.mark.parametrize("tag", KINDS)
    def test_apply_preserves_rate_and_length(self, tag):
        rng = np.random.default_rng(2)
        w = Waveform(tone(440.0, 8000))
        kind = sample_transform(rng, tag=tag)
        out = apply_transform(w, kind, rng)
        assert out.sample_rate_hz == RATE
        if tag == "pitch":
            assert len(out) == round(8000 / 2 ** (kind.params["cents"] / 1200))
        else:
            assert len(out) == 8000


class TestNoiseBank:
    def test_manifest(self, tmp_path):
        from wapat.audio_io import write_wav
        write_wav(Waveform(tone(300.0, 800)), tmp_path / "n.wav")
        (tmp_path / "bank.tsv").write_text("n.wav\thum\n\n")
        bank = NoiseBank.from_manifest(tmp_path / "bank.tsv")
        assert bank.tags == ("hum",) and len(bank.pick("hum", 5)) == 800

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "bank.tsv").write_text("only-a-path\n")
        with pytest.raises(ValueError, match=":1:"):
            NoiseBank.from_manifest(tmp_path / "bank.tsv")

    def test_synthetic_bank_nonsilent(self):
        bank = NoiseBank.synthetic()
        for tag in bank.tags:
            assert rms(bank.pick(tag, 0).samples) > 0
