import numpy as np
import pytest

from xlqa.aligner import links
from xlqa.alignft import (PROPORTIONAL, AlignedCorpus, AlignTrainConfig, BatchItem, alignment_loss,
                          batch_items, objective_gradcheck, pair_distance_report, regularization_loss,
                          sentence_layout, total_objective, train_alignment)
from xlqa.corpus import CLS, SEP
from xlqa.encoder import encode, init_params, snapshot, word_pool
from xlqa.errors import ContractError, InputError, TrainingError


def test_alignment_loss_by_hand():
    s = np.array([[0.0, 0.0], [1.0, 1.0]])
    t = np.array([[3.0, 4.0], [1.0, 2.0]])
    assert alignment_loss(s, t, links([(0, 0)])) == 25.0
    assert alignment_loss(s, t, links([(0, 0), (1, 1)])) == 26.0
    assert alignment_loss(s, t, frozenset()) == 0.0
    with pytest.raises(ContractError):
        alignment_loss(s, t, links([(2, 0)]))


def test_regularization_loss_by_hand():
    a = np.array([[1.0, 2.0]])
    b = np.array([[1.0, 0.0]])
    assert regularization_loss(a, b) == 4.0
    assert regularization_loss([a, a], [b, a]) == 4.0
    assert regularization_loss(a, a) == 0.0
    with pytest.raises(ContractError):
        regularization_loss(a, np.zeros((2, 2)))


def test_sentence_layout(cipher_small):
    corpus, _, vocab = cipher_small
    s = corpus.pairs[0][0]
    ids, ranges = sentence_layout(s)
    assert ids[0] == CLS and ids[-1] == SEP
    assert len(ranges) == len(s)
    assert ranges[0][0] == 1 and ranges[-1][1] == len(ids) - 1


def _items(cipher_small, n=4):
    corpus, gold, _ = cipher_small
    return [BatchItem(s, t, a, 0, (0, i)) for i, ((s, t), a) in enumerate(zip(corpus.pairs[:n], gold[:n]))]


def _numpy_objective(params, frozen, items):
    total = 0.0
    for it in items:
        s_ids, s_r = sentence_layout(it.source)
        t_ids, t_r = sentence_layout(it.target)
        sv, tv = encode(params, s_ids), encode(params, t_ids)
        s0, t0 = encode(frozen, s_ids), encode(frozen, t_ids)
        sw, tw = word_pool(sv, s_r), word_pool(tv, t_r)
        total += sum(float(np.sum((sw[l.p] - tw[l.q]) ** 2)) for l in it.links)
        total += float(np.sum((sv[1:-1] - s0[1:-1]) ** 2) + np.sum((tv[1:-1] - t0[1:-1]) ** 2))
    return total


def test_total_objective_matches_numpy_oracle(cipher_small, tiny_params):
    items = _items(cipher_small)
    frozen = snapshot(tiny_params)
    moved = tiny_params.copy()
    moved.update({"tok_emb": 0.1 * np.ones_like(moved["tok_emb"])})
    got = total_objective(moved, frozen, items).item()
    assert got == pytest.approx(_numpy_objective(moved, frozen, items), rel=1e-12)
    # at the snapshot the drift term vanishes
    unlinked = [BatchItem(it.source, it.target, frozenset()) for it in items]
    assert total_objective(tiny_params, frozen, unlinked).item() == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_objective_gradient(seed):
    worst, _ = objective_gradcheck(dict(hidden_dim=8, num_layers=2, num_heads=2, ffn_dim=12, max_seq_len=24),
                                   seed=seed)
    assert worst < 1e-4


def test_aligned_corpus_validates(cipher_small):
    corpus, gold, _ = cipher_small
    with pytest.raises(InputError):
        AlignedCorpus(corpus, tuple(gold[:-1]))
    bad = list(gold)
    bad[0] = links([(99, 0)])
    with pytest.raises(InputError):
        AlignedCorpus(corpus, tuple(bad))
    assert len(batch_items([AlignedCorpus(corpus, tuple(gold))])) == len(corpus)


def test_training_reduces_objective_and_keeps_input(cipher_small, tiny_params):
    corpus, gold, _ = cipher_small
    aligned = [AlignedCorpus(corpus, tuple(gold))]
    before = tiny_params.digest()
    cfg = AlignTrainConfig(learning_rate=0.002, epochs=4, batch_size=8, seed=5)
    tuned, trace, frozen = train_alignment(tiny_params, aligned, cfg)
    assert tiny_params.digest() == before and frozen.equals(tiny_params)
    assert trace[-1] < trace[0]
    again, trace2, _ = train_alignment(tiny_params, aligned, cfg)
    assert again.digest() == tuned.digest() and trace2 == trace
    rep0 = pair_distance_report(frozen, frozen, aligned)
    rep1 = pair_distance_report(tuned, frozen, aligned)
    assert rep0.drift == 0.0 and rep1.aligned_distance < rep0.aligned_distance


def test_zero_learning_rate_is_identity(cipher_small, tiny_params):
    corpus, gold, _ = cipher_small
    cfg = AlignTrainConfig(learning_rate=0.0, epochs=1, sampling=PROPORTIONAL)
    tuned, trace, _ = train_alignment(tiny_params, [AlignedCorpus(corpus, tuple(gold))], cfg)
    assert tuned.equals(tiny_params) and len(trace) == 1


def test_backtracking_is_monotone_per_batch(cipher_small, tiny_params):
    corpus, gold, _ = cipher_small
    cfg = AlignTrainConfig(learning_rate=0.5, epochs=3, batch_size=len(corpus), sampling=PROPORTIONAL,
                           backtrack=True, clip_norm=0.0)
    _, trace, _ = train_alignment(tiny_params, [AlignedCorpus(corpus, tuple(gold))], cfg)
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_divergence_raises_with_diagnostics(cipher_small, tiny_params):
    corpus, gold, _ = cipher_small
    cfg = AlignTrainConfig(learning_rate=1e200, epochs=3, batch_size=4, clip_norm=0.0)
    with pytest.raises(TrainingError) as info:
        with np.errstate(all="ignore"):
            train_alignment(tiny_params, [AlignedCorpus(corpus, tuple(gold))], cfg)
    assert "epoch" in info.value.diagnostics


def test_config_validation():
    with pytest.raises(InputError):
        AlignTrainConfig(sampling="nope")
    with pytest.raises(InputError):
        AlignTrainConfig(epochs=0)


def test_distance_report_without_links(cipher_small, tiny_params):
    corpus, _, _ = cipher_small
    empty = AlignedCorpus(corpus, tuple(frozenset() for _ in corpus.pairs))
    rep = pair_distance_report(tiny_params, snapshot(tiny_params), empty)
    assert rep.aligned_distance is None and rep.random_distance is None and rep.n_links == 0
