import numpy as np
import pytest
from hypothesis import settings

from wapat.datagen import CorpusSpec, Vocabulary, benchmark_specs, generate_corpus
from wapat.trainer import TrainConfig, train

settings.register_profile("default", deadline=None)
settings.load_profile("default")

TOY_STEPS = 300


def train_toy(seed: int, n_train: int = 80, n_test: int = 30, domains=None):
    """Clean-trained small model plus its in-memory benchmark."""
    specs = benchmark_specs(CorpusSpec(seed=seed), n_train=n_train, n_val=1, n_test=n_test, domains=domains)
    bench = {k: generate_corpus(s)[0] for k, s in specs.items() if k != "val"}
    cfg = TrainConfig(mode="no_at", batch_seconds=8.0, seed=seed).with_overrides(total_steps=TOY_STEPS)
    result = train(cfg, bench["train"], 11)
    return result, bench


@pytest.fixture(scope="session")
def toy():
    result, bench = train_toy(0)
    return result.state, bench, Vocabulary.synthetic(10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
