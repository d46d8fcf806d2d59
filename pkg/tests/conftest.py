import numpy as np
import pytest

from dbnfirewall import dataset, dbn


@pytest.fixture(scope="session")
def small_corpus():
    """Synthetic 16x16 corpus, 150 samples per class."""
    return dataset.synthetic_corpus(150, seed=3, side=16)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    X, y = small_corpus
    arch = dbn.DbnArch((256, 32, 32), pretrain_epochs=5, finetune_epochs=10, rng_seed=4)
    return dbn.train(arch, X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
