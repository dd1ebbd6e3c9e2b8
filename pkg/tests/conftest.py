import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tinyst.model import ModelConfig, Vocab, init
from tinyst.toy import make_toy_corpus

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifest = make_toy_corpus(root, n=20)
    return root, manifest


@pytest.fixture
def tiny_state():
    vocab = Vocab(list("कखग "))
    cfg = ModelConfig(vocab_size=len(vocab), d_model=16, n_heads=2, enc_layers=1, dec_layers=1,
                      ff_dim=32, dropout=0.0)
    return init(cfg, seed=0, dtype=np.float64, vocab=vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        line = f"{'PASS' if ok else 'FAIL'} {n:>2}. {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
