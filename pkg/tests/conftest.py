import numpy as np
import pytest

from mcforge.corpus import Corpus, Document
from mcforge import pv as pvmod
from mcforge import synth


def disjoint_corpus(n_docs: int = 100, tokens_per_title: int = 6) -> Corpus:
    """Titles with per-document vocabularies; maximally separable embeddings."""
    docs = [Document(f"d{i:03d}",
                     " ".join(f"w{i}x{j}" for j in range(tokens_per_title)),
                     "body text")
            for i in range(n_docs)]
    return Corpus(docs)


@pytest.fixture(scope="session")
def small_topic_corpus() -> Corpus:
    return synth.synthesize(synth.SynthConfig(n_docs=600, n_topics=6, seed=21))


@pytest.fixture(scope="session")
def small_pv_model(small_topic_corpus) -> pvmod.PvModel:
    cfg = pvmod.PvConfig(dim=32, epochs=25, min_count=3, negative_samples=5,
                         initial_lr=0.05, seed=13)
    return pvmod.train_pv(small_topic_corpus, cfg)


@pytest.fixture(scope="session")
def trained_disjoint():
    corpus = disjoint_corpus(100)
    cfg = pvmod.PvConfig(dim=32, epochs=80, min_count=1, negative_samples=5,
                         initial_lr=0.1, seed=9)
    return corpus, pvmod.train_pv(corpus, cfg)


def assert_finite(*arrays):
    for arr in arrays:
        assert np.isfinite(arr).all()
