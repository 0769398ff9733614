import numpy as np
import pytest

from coin_audit.embedding import SyntheticProvider
from coin_audit.harness.corpus import CorpusConfig, SyntheticCorpus
from coin_audit.matching import BLOCK_TO_ANSWER, TOKEN_TO_BLOCK, MatchingHead


@pytest.fixture(scope="session")
def provider():
    return SyntheticProvider(seed=0)


@pytest.fixture(scope="session")
def small_corpus():
    return SyntheticCorpus(CorpusConfig(n_records=30, length_range=(300, 1500)))


@pytest.fixture(scope="session")
def records(small_corpus):
    return small_corpus.records()


@pytest.fixture
def neutral_heads():
    """Untrained heads with a zero output layer: every score is exactly 0.5."""
    return (MatchingHead.init(TOKEN_TO_BLOCK, zero_output=True),
            MatchingHead.init(BLOCK_TO_ANSWER, zero_output=True))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_artifacts():
    """Quickly trained artifacts for plumbing tests; not meant to detect anything."""
    from coin_audit._nn import TrainConfig
    from coin_audit.harness.experiment import ArtifactConfig, train_artifacts
    cfg = ArtifactConfig(corpus=CorpusConfig(n_records=20, length_range=(300, 1200)),
                         train_records=20, head_pairs=300, deepsets_records=30,
                         head_config=TrainConfig(learning_rate=1e-3, epochs=1),
                         deepsets_config=TrainConfig(learning_rate=1e-3, epochs=1, loss="bce"))
    return train_artifacts(cfg)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line; all lines are echoed in the terminal summary."""
    def emit(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
