import numpy as np
import pytest

from kwsattack.audio_io import AudioClip
from kwsattack.corpus import clips_of, split_corpus, synthetic_corpus
from kwsattack.victim import TrainConfig, train

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(("yes", "no", "up"), 12, seed=3)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    return train(clips_of(small_corpus), TrainConfig(epochs=15, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_clip(rng, n=16000, scale=3000):
    return AudioClip(np.clip(rng.normal(0, scale, n), -32768, 32767).astype(np.int16))
