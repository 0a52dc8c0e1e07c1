import numpy as np
import pytest

from deformseq.dataset import split, synthesize


@pytest.fixture(scope="session")
def small_corpus():
    return synthesize(40, 24, seed=5)


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split(small_corpus, 0.8, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
