"""Alignment fine-tuning: pull aligned words together, keep outputs near the start.

For a batch of aligned sentence pairs the objective is

    sum over pairs of  sum_{(p,q) linked} ||f(s_p) - f(t_q)||^2
                     + sum_i ||f(s_i) - f0(s_i)||^2 + sum_i ||f(t_i) - f0(t_i)||^2

where ``f`` is the encoder being tuned and ``f0`` the frozen snapshot taken
before the first update. Word vectors are subword means; the drift term is
taken over subword positions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .aligner import check_alignment, links as make_links
from .corpus import CLS, SEP
from .encoder import Params, backprop, encode, forward, snapshot, track, word_pool
from .errors import ContractError, InputError, TrainingError
from .optim import clip_gradients, make_optimizer

logger = logging.getLogger(__name__)

PROPORTIONAL = "proportional"
UNIFORM_PER_CORPUS = "uniform_per_corpus"


@dataclass(frozen=True)
class AlignedCorpus:
    """A parallel corpus with one alignment set per sentence pair."""

    corpus: object
    alignments: tuple

    def __post_init__(self):
        if len(self.alignments) != len(self.corpus.pairs):
            raise InputError(
                f"{len(self.alignments)} alignment sets for {len(self.corpus.pairs)} sentence pairs")
        for (s, t), a in zip(self.corpus.pairs, self.alignments):
            check_alignment(a, len(s), len(t))


@dataclass(frozen=True)
class BatchItem:
    source: object
    target: object
    links: frozenset
    corpus_index: int = 0
    key: tuple = ()


@dataclass
class AlignTrainConfig:
    learning_rate: float = 0.001
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    sampling: str = UNIFORM_PER_CORPUS
    align_layer: int = -1
    optimizer: str = "sgd"
    reg_weight: float = 1.0
    clip_norm: float = 0.0  # 0 disables clipping
    backtrack: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InputError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")
        if self.sampling not in (PROPORTIONAL, UNIFORM_PER_CORPUS):
            raise InputError(f"unknown sampling scheme {self.sampling!r}")


def sentence_layout(sentence):
    """``([CLS] subwords [SEP])`` ids and the word ranges inside them."""
    ids = [CLS]
    ranges = []
    for tok in sentence.tokens:
        if not tok.subword_ids:
            raise InputError("sentence tokens carry no subword ids; encode with a vocabulary first")
        ranges.append((len(ids), len(ids) + len(tok.subword_ids)))
        ids.extend(tok.subword_ids)
    ids.append(SEP)
    return ids, ranges


def _token_rows(vectors, n_ids):
    # drop the [CLS]/[SEP] framing rows
    return ad.rows(vectors, 1, n_ids - 1) if isinstance(vectors, ad.Tensor) else vectors[1:n_ids - 1]


def alignment_loss(source_word_vecs, target_word_vecs, links) -> "ad.Tensor":
    """Sum of squared L2 distances over linked word pairs (0 when unlinked)."""
    pairs = sorted((l.p, l.q) for l in links)
    ns, nt = source_word_vecs.shape[0], target_word_vecs.shape[0]
    for p, q in pairs:
        if not (0 <= p < ns and 0 <= q < nt):
            raise ContractError(f"link {p}-{q} out of range for {ns} source / {nt} target words")
    if not pairs:
        return _plain(ad.Tensor(np.asarray(0.0)), source_word_vecs, target_word_vecs)
    ps = [p for p, _ in pairs]
    qs = [q for _, q in pairs]
    diff = ad.take_rows(source_word_vecs, ps) - ad.take_rows(target_word_vecs, qs)
    return _plain(ad.square_norm(diff), source_word_vecs, target_word_vecs)


def regularization_loss(current_vecs, initial_vecs) -> "ad.Tensor":
    """Squared drift of every token vector from its initial-encoder value.

    Accepts one matrix each, or matching sequences of matrices (e.g. the
    source and target sentence of a pair).
    """
    if isinstance(current_vecs, (list, tuple)):
        if not isinstance(initial_vecs, (list, tuple)) or len(current_vecs) != len(initial_vecs):
            raise ContractError("current and initial must both hold the same number of matrices")
        out = 0.0
        for c, i in zip(current_vecs, initial_vecs):
            out = out + regularization_loss(c, i)
        return out
    if tuple(current_vecs.shape) != tuple(np.shape(initial_vecs.data if isinstance(initial_vecs, ad.Tensor) else initial_vecs)):
        raise ContractError(
            f"shape mismatch: current {tuple(current_vecs.shape)} vs initial {np.shape(initial_vecs)}")
    return _plain(ad.square_norm(ad.sub(current_vecs, initial_vecs)), current_vecs, initial_vecs)


def _plain(result, *inputs):
    # plain arrays in, plain float out; any Tensor input keeps the graph
    if any(isinstance(x, ad.Tensor) for x in inputs):
        return result
    return float(result.data)


class SnapshotCache:
    """Memoised frozen-encoder outputs keyed by sentence identity."""

    def __init__(self, frozen: Params, layer):
        self.frozen = frozen
        self.layer = layer
        self._store = {}

    def get(self, key, ids):
        hit = self._store.get(key) if key else None
        if hit is None:
            hit = encode(self.frozen, ids, self.layer)
            if key:
                self._store[key] = hit
        return hit


def pair_objective(source, item: BatchItem, cache: SnapshotCache, layer, reg_weight=1.0):
    s_ids, s_ranges = sentence_layout(item.source)
    t_ids, t_ranges = sentence_layout(item.target)
    s_vec = forward(source, s_ids, layer)
    t_vec = forward(source, t_ids, layer)
    l_term = alignment_loss(word_pool(s_vec, s_ranges), word_pool(t_vec, t_ranges), item.links)
    s0 = cache.get(item.key + ("s",) if item.key else (), s_ids)
    t0 = cache.get(item.key + ("t",) if item.key else (), t_ids)
    r_term = regularization_loss(
        [_token_rows(s_vec, len(s_ids)), _token_rows(t_vec, len(t_ids))],
        [s0[1:len(s_ids) - 1], t0[1:len(t_ids) - 1]],
    )
    if reg_weight != 1.0:
        r_term = ad.mul(r_term, reg_weight)
    return l_term + r_term


def total_objective(source, frozen, batch: Sequence, align_layer=-1, reg_weight=1.0, cache=None):
    """Unweighted sum of the alignment and drift terms over ``batch``.

    ``source`` is a :class:`Params` (value only) or a tracked parameter set
    (differentiable); ``frozen`` is the snapshot of the initial encoder.
    """
    if cache is None:
        cache = SnapshotCache(frozen, align_layer)
    out = ad.Tensor(np.asarray(0.0))
    for item in batch:
        out = out + pair_objective(source, item, cache, align_layer, reg_weight)
    return out


def batch_items(aligned: Sequence) -> list:
    """Every (pair, links) of every aligned corpus as a :class:`BatchItem`."""
    items = []
    for v, ac in enumerate(aligned):
        for i, ((s, t), a) in enumerate(zip(ac.corpus.pairs, ac.alignments)):
            items.append(BatchItem(s, t, frozenset(a), v, (v, i)))
    return items


def _epoch_batches(aligned, by_corpus, config, rng, cursors):
    n_total = sum(len(items) for items in by_corpus)
    n_batches = max(1, math.ceil(n_total / config.batch_size))
    if config.sampling == PROPORTIONAL:
        flat = [it for items in by_corpus for it in items]
        order = rng.permutation(len(flat))
        return [[flat[j] for j in order[b * config.batch_size:(b + 1) * config.batch_size]]
                for b in range(n_batches)]
    batches = []
    for _ in range(n_batches):
        batch = []
        for v in rng.integers(0, len(by_corpus), size=config.batch_size):
            perm, pos = cursors[v]
            if pos >= len(perm):
                perm, pos = rng.permutation(len(by_corpus[v])), 0
            batch.append(by_corpus[v][perm[pos]])
            cursors[v] = (perm, pos + 1)
        batches.append(batch)
    return batches


def train_alignment(params: Params, aligned: Sequence, config: AlignTrainConfig, frozen=None):
    """Minimise the alignment objective by gradient descent.

    ``params`` is not modified. Returns ``(trained_params, trace, frozen)``
    where ``trace[e]`` is the summed batch objective seen during epoch ``e``
    (each batch measured before its own update).
    """
    if not aligned:
        raise InputError("no aligned corpora to train on")
    params = params.copy()
    frozen = snapshot(params) if frozen is None else frozen
    cache = SnapshotCache(frozen, config.align_layer)
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    by_corpus = [[BatchItem(s, t, frozenset(a), v, (v, i))
                  for i, ((s, t), a) in enumerate(zip(ac.corpus.pairs, ac.alignments))]
                 for v, ac in enumerate(aligned)]
    cursors = [(rng.permutation(len(items)), 0) for items in by_corpus]
    trace = []
    for epoch in range(config.epochs):
        epoch_total = 0.0
        for b, batch in enumerate(_epoch_batches(aligned, by_corpus, config, rng, cursors)):
            tracked = track(params)
            loss = total_objective(tracked, frozen, batch, config.align_layer, config.reg_weight, cache)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite objective {value} at epoch {epoch}, batch {b}",
                                    epoch=epoch, batch=b, loss=value)
            grads = clip_gradients(backprop(tracked, loss), config.clip_norm)
            if config.learning_rate > 0:
                if config.backtrack:
                    _backtracking_step(params, grads, batch, frozen, config, cache, value, optimizer)
                else:
                    optimizer.step(params, grads)
            epoch_total += value
        trace.append(epoch_total)
        logger.info("align epoch %d objective %.6f", epoch, epoch_total)
    return params, trace, frozen


def _backtracking_step(params, grads, batch, frozen, config, cache, value, optimizer, max_halvings=30):
    lr = optimizer.lr
    for _ in range(max_halvings):
        trial = params.copy()
        trial.update({k: -lr * g for k, g in grads.items()})
        new = total_objective(trial, frozen, batch, config.align_layer, config.reg_weight, cache).item()
        if new <= value:
            params.tensors = trial.tensors
            optimizer.lr = lr
            return
        lr *= 0.5
    optimizer.lr = lr


@dataclass
class DistanceReport:
    aligned_distance: "float | None"
    random_distance: "float | None"
    drift: float
    n_links: int = 0
    n_random: int = 0
    extra: dict = field(default_factory=dict)


def pair_distance_report(params: Params, frozen: Params, aligned: Sequence, align_layer=-1, seed=0):
    """Mean aligned-pair, random-unaligned-pair and drift L2 distances.

    Random pairs are drawn within each sentence pair, one per link, among
    word pairs that are not linked.
    """
    if not isinstance(aligned, (list, tuple)):
        aligned = [aligned]
    rng = np.random.default_rng(seed)
    al, rnd, drift = [], [], []
    for ac in aligned:
        for (s, t), links in zip(ac.corpus.pairs, ac.alignments):
            s_ids, s_ranges = sentence_layout(s)
            t_ids, t_ranges = sentence_layout(t)
            sv, tv = encode(params, s_ids, align_layer), encode(params, t_ids, align_layer)
            sw, tw = word_pool(sv, s_ranges), word_pool(tv, t_ranges)
            linked = {(l.p, l.q) for l in links}
            for p, q in sorted(linked):
                al.append(float(np.linalg.norm(sw[p] - tw[q])))
            free = [(p, q) for p in range(len(s_ranges)) for q in range(len(t_ranges)) if (p, q) not in linked]
            if free and linked:
                for j in rng.integers(0, len(free), size=len(linked)):
                    p, q = free[j]
                    rnd.append(float(np.linalg.norm(sw[p] - tw[q])))
            s0, t0 = encode(frozen, s_ids, align_layer), encode(frozen, t_ids, align_layer)
            drift.extend(np.linalg.norm(sv[1:-1] - s0[1:-1], axis=1))
            drift.extend(np.linalg.norm(tv[1:-1] - t0[1:-1], axis=1))
    return DistanceReport(
        aligned_distance=float(np.mean(al)) if al else None,
        random_distance=float(np.mean(rnd)) if rnd else None,
        drift=float(np.mean(drift)) if drift else 0.0,
        n_links=len(al),
        n_random=len(rnd),
    )


__all__ = [
    "AlignTrainConfig", "AlignedCorpus", "BatchItem", "DistanceReport", "PROPORTIONAL",
    "UNIFORM_PER_CORPUS", "alignment_loss", "batch_items", "objective_gradcheck", "pair_distance_report",
    "regularization_loss", "sentence_layout", "total_objective",
    "train_alignment",
]


def objective_gradcheck(config_kwargs=None, seed=0, n_pairs=2, n_words=12, merges=20, perturb=0.05,
                        align_layer=-1, max_entries=12):
    """Finite-difference check of the total objective on a random toy batch.

    Builds a random bitext and random links, a freshly initialised encoder
    (``config_kwargs`` minus ``vocab_size``), and a current parameter set
    nudged away from the snapshot so the drift term has a gradient.
    Returns ``(worst_error, per_tensor_report)``.
    """
    from .corpus import ParallelCorpus, build_vocab
    from .encoder import EncoderConfig, gradient_check, init_params
    from .synth import make_lexicon

    rng = np.random.default_rng(seed)
    words = make_lexicon(n_words, rng)
    texts = []
    for _ in range(n_pairs):
        a = " ".join(rng.choice(words, size=int(rng.integers(2, 5))))
        b = " ".join(rng.choice(words, size=int(rng.integers(2, 5))))
        texts.append((a, b))
    raw = ParallelCorpus.from_texts(texts, "xa", "xb")
    vocab = build_vocab([raw], merges)
    corpus = raw.with_vocab(vocab)
    kw = dict(config_kwargs or {})
    kw.setdefault("seed", seed)
    config = EncoderConfig(vocab_size=len(vocab), **kw)
    frozen_params = init_params(config)
    params = frozen_params.copy()
    params.update({k: perturb * rng.standard_normal(v.shape) for k, v in params.items()})
    batch = []
    for i, (s, t) in enumerate(corpus.pairs):
        cand = [(p, q) for p in range(len(s)) for q in range(len(t))]
        pick = rng.choice(len(cand), size=int(rng.integers(1, len(cand) + 1)), replace=False)
        batch.append(BatchItem(s, t, make_links(cand[j] for j in sorted(pick)), 0, (0, i)))
    frozen = snapshot(frozen_params)
    cache = SnapshotCache(frozen, align_layer)
    return gradient_check(params, lambda src: total_objective(src, frozen, batch, align_layer, 1.0, cache),
                          seed=seed, max_entries=max_entries)
