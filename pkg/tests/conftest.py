import numpy as np
import pytest

from xlqa.corpus import ParallelCorpus, build_vocab
from xlqa.encoder import EncoderConfig, init_params
from xlqa.synth import cipher_bitext


@pytest.fixture(scope="session")
def cipher_small():
    corpus, gold = cipher_bitext(n_pairs=24, n_words=15, seed=7, min_len=2, max_len=4)
    vocab = build_vocab([corpus], 40)
    return corpus.with_vocab(vocab), gold, vocab


@pytest.fixture
def tiny_config(cipher_small):
    _, _, vocab = cipher_small
    return EncoderConfig(vocab_size=len(vocab), hidden_dim=8, num_layers=2, num_heads=2, ffn_dim=16,
                         max_seq_len=24, seed=3)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
