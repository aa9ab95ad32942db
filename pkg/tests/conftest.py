import numpy as np
import pytest

from qpnet import analysis, corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    """Two speakers, three 0.3 s utterances each: list of (speaker, utt, wave, f0, features)."""
    config = corpus.CorpusConfig(corpus.default_speakers([(120, 240), (150, 300)]),
                                 utterances=3, duration=0.3, seed=11)
    items = []
    for spk, utt, wave, f0 in corpus.generate_corpus(config):
        items.append((spk, utt, wave, f0, analysis.extract_features(wave)))
    return items


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def record_verdict(number, name, passed, detail):
    """Store one acceptance verdict line for the terminal summary."""
    line = f"[{number}] {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE.append((number, line))
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance verdicts")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
