import numpy as np
import pytest

from wapat.datagen import (DEFAULT_DOMAINS, IN_DOMAIN, CorpusSpec, Vocabulary, benchmark_specs, export_corpus,
                           generate_corpus, load_manifest, symbol_template)
from wapat.frontend import FrontendSpec
from wapat.metrics import evaluate

from conftest import train_toy


def test_unit_corpus():
    spec = CorpusSpec(vocab_size=5, min_length=1, max_length=1, n_utterances=1, seed=0)
    (w, y), = generate_corpus(spec)[0]
    assert len(w) == 1920  # 120 ms at 16 kHz
    k = y.ids[0]
    f = np.abs(np.fft.rfft(w.samples, 16000))
    peak = np.argmax(f)
    assert abs(1200 * np.log2(peak / spec.symbol_freq(k))) <= spec.freq_jitter_cents + 15
    one = CorpusSpec(vocab_size=5, min_length=1, max_length=1, n_utterances=4, seed=1)
    assert all(len(it[1]) == 1 for it in generate_corpus(one)[0])


def test_regeneration_is_bit_identical():
    spec = CorpusSpec(n_utterances=5, seed=3)
    a, b = generate_corpus(spec)[0], generate_corpus(spec)[0]
    assert all(np.array_equal(x.samples, y.samples) and yx == yy for (x, yx), (y, yy) in zip(a, b))


def test_feasibility_and_ramps():
    spec = CorpusSpec(n_utterances=40, seed=2)
    fe = FrontendSpec()
    for w, y in generate_corpus(spec)[0]:
        assert fe.frame_count(len(w)) >= 2 * len(y) + 1
        assert np.max(np.abs(w.samples)) <= 1.0
    tmpl = symbol_template(spec, 0, np.random.default_rng(0))
    assert tmpl[0] == 0.0 and abs(tmpl[-1]) < 0.05


@pytest.mark.parametrize("kw, field", [(dict(vocab_size=0), "vocab_size"), (dict(min_length=0), "length"),
                                       (dict(amplitude_range=(0.5, 1.5)), "amplitude_range"),
                                       (dict(vocab_size=40), "Nyquist")])
def test_invalid_specs(kw, field):
    with pytest.raises(ValueError, match=field):
        CorpusSpec(**kw)


def test_infeasible_template():
    with pytest.raises(ValueError, match="window"):
        generate_corpus(CorpusSpec(symbol_ms=20.0, ramp_ms=5.0, n_utterances=1))


def test_benchmark_layout():
    specs = benchmark_specs(CorpusSpec(), 10, 5, 7)
    assert set(specs) == {"train", "val", IN_DOMAIN, *DEFAULT_DOMAINS}
    assert specs["train"].n_utterances == 10 and specs["noisy"].n_utterances == 7
    assert len({s.seed for s in specs.values()}) == len(specs)
    assert specs["train"].domain_profile == () and specs["noisy"].domain_profile


class TestManifest:
    def test_empty(self, tmp_path):
        (tmp_path / "m.tsv").write_text("")
        assert load_manifest(tmp_path / "m.tsv") == []

    def test_export_and_load(self, tmp_path):
        items, manifest = generate_corpus(CorpusSpec(n_utterances=2, seed=4))
        path = export_corpus(items, manifest, tmp_path, "demo")
        loaded = load_manifest(path)
        assert [t for _, t in loaded] == [y.words for _, y in items]
        for (w, _), (w2, _) in zip(items, loaded):
            assert np.max(np.abs(w.samples - w2.samples)) <= 1 / 32768

    def test_extra_tabs_stay_in_transcript(self, tmp_path):
        items, manifest = generate_corpus(CorpusSpec(n_utterances=1, seed=4))
        export_corpus(items, manifest, tmp_path, "demo")
        (tmp_path / "m.tsv").write_text("demo/utt00000.wav\ta\tb\tc\n")
        assert load_manifest(tmp_path / "m.tsv")[0][1] == "a\tb\tc"

    def test_malformed_line_number(self, tmp_path):
        (tmp_path / "m.tsv").write_text("\nno-tab-here\n")
        with pytest.raises(ValueError, match=":2:"):
            load_manifest(tmp_path / "m.tsv")

    def test_missing_file(self, tmp_path):
        (tmp_path / "m.tsv").write_text("nope.wav\ts1\n")
        with pytest.raises(FileNotFoundError, match=":1:"):
            load_manifest(tmp_path / "m.tsv")


def test_vocabulary():
    v = Vocabulary.from_transcripts(["s1 s0", "s2"])
    assert v.words == ["s0", "s1", "s2"]
    assert v.encode("s2 s0").ids == (2, 0)
    assert v.decode([1, 1]) == "s1 s1"
    with pytest.raises(ValueError, match="s9"):
        v.encode("s9")


@pytest.mark.slow
def test_noisy_domain_is_harder_for_clean_model():
    domains = {"snr5": ({"kind": "add", "snr_db": (5.0, 5.0)},)}
    gaps = []
    vocab = Vocabulary.synthetic(10)
    for seed in range(5):
        result, bench = train_toy(seed, n_train=60, n_test=30, domains=domains)
        r = evaluate(result.state, {k: bench[k] for k in (IN_DOMAIN, "snr5")}, vocab)
        gaps.append(float(r.per_dataset["snr5"]) - float(r.per_dataset[IN_DOMAIN]))
    assert np.median(gaps) > 0
