"""IBM Model 1 lexical aligner and Pharaoh alignment I/O.

Word alignments only need to be good enough to pair up translated words for
the embedding-alignment objective; any external aligner that writes Pharaoh
``p-q`` lines can be swapped in through :func:`read_pharaoh`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import FormatError, InputError

NULL = "<NULL>"
ARGMAX = "argmax"


@dataclass(frozen=True)
class AlignmentLink:
    p: int
    q: int


def links(pairs: Iterable) -> frozenset:
    """Build an alignment set from ``(p, q)`` tuples."""
    return frozenset(AlignmentLink(int(p), int(q)) for p, q in pairs)


def as_tuples(alignment) -> list:
    return sorted((l.p, l.q) for l in alignment)


class TranslationTable:
    """t(target | source) over co-occurring word pairs, plus the NULL source."""

    def __init__(self, sources, targets, pair_src, pair_tgt, probs, use_null):
        self.sources = list(sources)
        self.targets = list(targets)
        self._src_index = {w: i for i, w in enumerate(self.sources)}
        self._tgt_index = {w: i for i, w in enumerate(self.targets)}
        self.pair_src = np.asarray(pair_src, dtype=np.int64)
        self.pair_tgt = np.asarray(pair_tgt, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.use_null = use_null
        self._lookup = {
            (int(s), int(t)): k for k, (s, t) in enumerate(zip(self.pair_src, self.pair_tgt))
        }

    def prob(self, target: str, source: str) -> float:
        s = self._src_index.get(source)
        t = self._tgt_index.get(target)
        if s is None or t is None:
            return 0.0
        k = self._lookup.get((s, t))
        return 0.0 if k is None else float(self.probs[k])

    def distribution(self, source: str) -> dict:
        s = self._src_index.get(source)
        if s is None:
            return {}
        sel = np.nonzero(self.pair_src == s)[0]
        return {self.targets[self.pair_tgt[k]]: float(self.probs[k]) for k in sel}

    def best_translation(self, source: str):
        dist = self.distribution(source)
        if not dist:
            return None
        return min(dist.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    def to_tsv(self) -> str:
        rows = sorted(
            (self.sources[s], self.targets[t], p)
            for s, t, p in zip(self.pair_src, self.pair_tgt, self.probs)
        )
        return "".join(f"{s}\t{t}\t{float(p)!r}\n" for s, t, p in rows)


def _words(sentence) -> list:
    return sentence.words if hasattr(sentence, "words") else list(sentence)


def _index_corpus(corpus, use_null):
    """Flatten the corpus into co-occurrence-id blocks for the E-step kernel."""
    pairs = [(_words(s), _words(t)) for s, t in corpus.pairs]
    src_vocab = sorted({w for s, _ in pairs for w in s})
    tgt_vocab = sorted({w for _, t in pairs for w in t})
    sources = ([NULL] if use_null else []) + src_vocab
    s_idx = {w: i for i, w in enumerate(sources)}
    t_idx = {w: i for i, w in enumerate(tgt_vocab)}

    sent_src, sent_tgt = [], []
    cooc = set()
    for s, t in pairs:
        si = ([0] if use_null else []) + [s_idx[w] for w in s]
        ti = [t_idx[w] for w in t]
        sent_src.append(si)
        sent_tgt.append(ti)
        cooc.update((a, b) for a in si for b in ti)
    ordered = sorted(cooc)
    pid = {pair: k for k, pair in enumerate(ordered)}
    pair_src = np.array([a for a, _ in ordered], dtype=np.int64)
    pair_tgt = np.array([b for _, b in ordered], dtype=np.int64)

    offsets, src_lens, tgt_lens, flat = [], [], [], []
    for si, ti in zip(sent_src, sent_tgt):
        offsets.append(len(flat))
        src_lens.append(len(si))
        tgt_lens.append(len(ti))
        for b in ti:
            flat.extend(pid[a, b] for a in si)
    arrays = (
        np.array(flat, dtype=np.int64),
        np.array(offsets, dtype=np.int64),
        np.array(src_lens, dtype=np.int64),
        np.array(tgt_lens, dtype=np.int64),
    )
    return sources, tgt_vocab, pair_src, pair_tgt, arrays


def _normalize(counts, pair_src, n_sources):
    totals = np.bincount(pair_src, weights=counts, minlength=n_sources)
    return counts / totals[pair_src]


def train_ibm1(corpus, iterations: int = 5, use_null: bool = True, kernel=None):
    """Train t(target | source) by EM.

    Returns ``(table, trace)``. ``trace[0]`` is the corpus log-likelihood of
    the uniform initialisation and ``trace[i]`` the log-likelihood after
    iteration ``i``, so ``len(trace) == iterations + 1``.
    """
    if iterations < 1:
        raise InputError("iterations must be >= 1")
    if not corpus.pairs:
        raise InputError("corpus is empty")
    estep = kernel.ibm1_estep if kernel is not None else kernels.ibm1_estep
    sources, targets, pair_src, pair_tgt, arrays = _index_corpus(corpus, use_null)
    flat, offsets, src_lens, tgt_lens = arrays

    # uniform over the targets each source word co-occurs with
    fanout = np.bincount(pair_src, minlength=len(sources)).astype(np.float64)
    probs = 1.0 / fanout[pair_src]

    trace = []
    for _ in range(iterations):
        counts = np.zeros_like(probs)
        trace.append(estep(flat, offsets, src_lens, tgt_lens, probs, counts))
        probs = _normalize(counts, pair_src, len(sources))
    scratch = np.zeros_like(probs)
    trace.append(estep(flat, offsets, src_lens, tgt_lens, probs, scratch))
    return TranslationTable(sources, targets, pair_src, pair_tgt, probs, use_null), trace


def extract_alignments(table: TranslationTable, pair, threshold=ARGMAX) -> frozenset:
    """Links for one ``(source, target)`` sentence pair.

    ``threshold=ARGMAX`` links each target word to its most probable source
    word (lowest index on ties) unless NULL is strictly more probable.
    A numeric threshold keeps every link whose posterior reaches it.
    """
    src, tgt = _words(pair[0]), _words(pair[1])
    out = []
    for q, tw in enumerate(tgt):
        scores = [table.prob(tw, sw) for sw in src]
        null_score = table.prob(tw, NULL) if table.use_null else 0.0
        if threshold == ARGMAX:
            if not scores:
                continue
            best = max(scores)
            if best <= 0.0 or null_score > best:
                continue
            out.append((scores.index(best), q))
        else:
            denom = sum(scores) + null_score
            if denom <= 0.0:
                continue
            out.extend((p, q) for p, sc in enumerate(scores) if sc > 0.0 and sc / denom >= threshold)
    return links(out)


def symmetrize(forward, reverse) -> frozenset:
    """Intersection; ``reverse`` must already be transposed to (source, target)."""
    return frozenset(forward) & frozenset(reverse)


def transpose(alignment) -> frozenset:
    return frozenset(AlignmentLink(l.q, l.p) for l in alignment)


def reversed_corpus(corpus):
    from .corpus import ParallelCorpus

    return ParallelCorpus(corpus.target_lang, corpus.source_lang,
                          tuple((t, s) for s, t in corpus.pairs))


def align_corpus(corpus, iterations=5, use_null=True, symmetric=False, threshold=ARGMAX) -> list:
    """Train IBM-1 on ``corpus`` and extract one alignment set per pair."""
    table, _ = train_ibm1(corpus, iterations, use_null)
    forward = [extract_alignments(table, pair, threshold) for pair in corpus.pairs]
    if not symmetric:
        return forward
    rtable, _ = train_ibm1(reversed_corpus(corpus), iterations, use_null)
    return [
        symmetrize(f, transpose(extract_alignments(rtable, (t, s), threshold)))
        for f, (s, t) in zip(forward, corpus.pairs)
    ]


def parse_pharaoh_line(line: str, line_no: int = 1) -> frozenset:
    out = []
    for tok in line.split():
        p, sep, q = tok.partition("-")
        if not sep or not p.isdigit() or not q.isdigit():
            raise FormatError(f"line {line_no}: malformed alignment token {tok!r}")
        out.append((int(p), int(q)))
    return links(out)


def read_pharaoh(path) -> list:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [parse_pharaoh_line(line, n) for n, line in enumerate(lines, start=1)]


def format_pharaoh(alignment) -> str:
    return " ".join(f"{p}-{q}" for p, q in as_tuples(alignment))


def write_pharaoh(sets: Sequence, path) -> None:
    Path(path).write_text("".join(format_pharaoh(a) + "\n" for a in sets), encoding="utf-8")


def check_alignment(alignment, src_len: int, tgt_len: int) -> None:
    for l in alignment:
        if not (0 <= l.p < src_len and 0 <= l.q < tgt_len):
            raise InputError(f"link {l.p}-{l.q} out of range for a {src_len}x{tgt_len} pair")


def loglik_bruteforce(table: TranslationTable, corpus) -> float:
    """Direct evaluation of the IBM-1 log-likelihood; slow, used for checks."""
    ll = 0.0
    for s, t in corpus.pairs:
        src = ([NULL] if table.use_null else []) + _words(s)
        for tw in _words(t):
            ll += math.log(sum(table.prob(tw, sw) for sw in src) / len(src))
    return ll
