import numpy as np
import pytest

from slotnet.synth import SceneConfig, write_corpus
from slotnet.train import load_corpus

import suites


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(SceneConfig(image_w=160, image_h=160, seed=11, max_slots=2), 10, root, workers=1)
    return root


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_dir):
    return load_corpus(tiny_corpus_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if suites.ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(suites.ACCEPTANCE):
            terminalreporter.write_line(suites.ACCEPTANCE[n])
