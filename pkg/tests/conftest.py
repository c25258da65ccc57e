import numpy as np
import pytest
import torch

from eeg_cloak.dataset import build_manifest, split_within_subject
from eeg_cloak.fixtures import SyntheticCorpus


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 subjects x 5 conditions x 3 trials, gzip-compressed."""
    root = tmp_path_factory.mktemp("corpus")
    corpus = SyntheticCorpus(n_subjects=4, trials_per_condition=3, seed=1)
    corpus.write(root)
    return root, corpus


@pytest.fixture(scope="session")
def small_manifest(small_corpus):
    return build_manifest(small_corpus[0])


@pytest.fixture(scope="session")
def small_split(small_manifest):
    return split_within_subject(small_manifest, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}")
