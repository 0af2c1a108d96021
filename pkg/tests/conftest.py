import numpy as np
import pytest

from syneslm.corpus import CorpusSpec, generate


@pytest.fixture(scope="session")
def small_spec():
    return CorpusSpec(n_train=120, n_dev=20, n_test=20, seed=5)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    return generate(small_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_corpus():
    return generate(CorpusSpec())


@pytest.fixture(scope="session")
def default_assets(default_corpus):
    from syneslm.trainer import build_assets

    return build_assets(default_corpus["train"])


@pytest.fixture(scope="session")
def quantized(default_corpus, default_assets):
    from syneslm.data import with_dst_tokens

    return {k: with_dst_tokens(v, default_assets.codebook) for k, v in default_corpus.items()}
