"""Seeded synthetic data: cipher-language bitext and a toy cross-lingual QA set.

The "target language" is a letter-substitution cipher of the source, so every
word has exactly one translation and the gold alignment of a sentence pair is
the identity. QA examples are small fact lists ("<entity> <relation>
<value> .") with the question asking for one fact's value.
"""
from __future__ import annotations

import string

import numpy as np

from .aligner import links
from .corpus import ParallelCorpus, QAExample

SOURCE_ALPHABET = "abcdefghijklm"
CIPHER_ALPHABET = "nopqrstuvwxyz"
_CIPHER = str.maketrans(SOURCE_ALPHABET + SOURCE_ALPHABET.upper(),
                        CIPHER_ALPHABET + CIPHER_ALPHABET.upper())


def cipher(text: str) -> str:
    """Token-wise substitution cipher; punctuation and spaces pass through."""
    return text.translate(_CIPHER)


def make_lexicon(n_words: int, rng, min_len=2, max_len=5) -> list:
    words = set()
    while len(words) < n_words:
        n = int(rng.integers(min_len, max_len + 1))
        words.add("".join(rng.choice(list(SOURCE_ALPHABET), size=n)))
    return sorted(words)


def cipher_bitext(n_pairs=500, n_words=80, seed=0, min_len=4, max_len=8, src_lang="src", tgt_lang="cip",
                  lexicon=None):
    """Return ``(corpus, gold_alignments)`` for a cipher bitext.

    Words are drawn with Zipfian frequencies from ``lexicon`` (or a fresh
    random lexicon of ``n_words``); sentence ``t`` is the cipher of sentence
    ``s``, so the gold alignment links word ``i`` to word ``i``.
    """
    rng = np.random.default_rng(seed)
    lexicon = make_lexicon(n_words, rng) if lexicon is None else list(lexicon)
    n_words = len(lexicon)
    weights = 1.0 / np.arange(1, n_words + 1)
    weights /= weights.sum()
    texts, gold = [], []
    for _ in range(n_pairs):
        n = int(rng.integers(min_len, max_len + 1))
        sent = " ".join(lexicon[j] for j in rng.choice(n_words, size=n, p=weights))
        texts.append((sent, cipher(sent)))
        gold.append(links((i, i) for i in range(n)))
    return ParallelCorpus.from_texts(texts, src_lang, tgt_lang), gold


def lexicon_bitext(n_pairs=50, n_words=10, seed=0, src_lang="src", tgt_lang="tgt", min_len=3, max_len=6):
    """Bitext from a one-to-one lexicon with target word order shuffled."""
    rng = np.random.default_rng(seed)
    letters = list(string.ascii_lowercase)
    src_words = [f"s{letters[i % 26]}{i}" for i in range(n_words)]
    tgt_words = [f"t{letters[(7 * i + 3) % 26]}{i}" for i in range(n_words)]
    lexicon = dict(zip(src_words, tgt_words))
    texts = []
    for _ in range(n_pairs):
        n = int(rng.integers(min_len, max_len + 1))
        chosen = [src_words[j] for j in rng.choice(n_words, size=n, replace=False)]
        translated = [lexicon[w] for w in chosen]
        rng.shuffle(translated)
        texts.append((" ".join(chosen), " ".join(translated)))
    return ParallelCorpus.from_texts(texts, src_lang, tgt_lang), lexicon


# --------------------------------------------------------------------------
# toy QA


def _join_passages(sentences):
    text = ""
    spans = []
    for k, sent in enumerate(sentences):
        if k:
            text += " "
        start = len(text.encode("utf-8"))
        text += sent
        spans.append((start, len(text.encode("utf-8"))))
    return text, spans


def toy_world(world_seed=0, n_entities=12, n_relations=6, n_values=20):
    """Entity, relation and value word lists shared by every split."""
    rng = np.random.default_rng(world_seed)
    vocab = make_lexicon(n_entities + n_relations + n_values, rng, 3, 5)
    perm = rng.permutation(len(vocab))
    return {
        "entities": [vocab[i] for i in perm[:n_entities]],
        "relations": [vocab[i] for i in perm[n_entities:n_entities + n_relations]],
        "values": [vocab[i] for i in perm[n_entities + n_relations:]],
    }


def world_lexicon(world) -> list:
    return sorted(world["entities"] + world["relations"] + world["values"])


def toy_qa(n_examples, seed=0, langs=("src", "cip"), world=None, n_passages=3, null_rate=0.1,
           id_prefix="q"):
    """Monolingual toy QA examples in each of ``langs``.

    The first language is the plain vocabulary; every other language in
    ``langs`` is rendered through :func:`cipher` (all share one cipher).
    Each context holds ``n_passages`` one-fact passages. The question names
    an entity and a relation; the minimal answer is the value word of the
    passage stating that fact. With probability ``null_rate`` no passage
    matches and both golds are NULL.
    """
    world = toy_world() if world is None else world
    ents, rels, vals = world["entities"], world["relations"], world["values"]
    n_entities, n_relations, n_values = len(ents), len(rels), len(vals)
    rng = np.random.default_rng(seed)
    out = []
    for n in range(n_examples):
        lang = langs[n % len(langs)]
        render = (lambda s: s) if lang == langs[0] else cipher
        facts = set()
        while len(facts) < n_passages:
            facts.add((int(rng.integers(n_entities)), int(rng.integers(n_relations))))
        facts = sorted(facts, key=lambda f: rng.random())
        values = [int(rng.integers(n_values)) for _ in facts]
        gold = int(rng.integers(n_passages))
        e, r = facts[gold]
        is_null = rng.random() < null_rate
        if is_null:
            asked = {(e2, r2) for e2, r2 in facts}
            while (e, r) in asked:
                e, r = int(rng.integers(n_entities)), int(rng.integers(n_relations))
        sentences = [render(f"{ents[fe]} {rels[fr]} {vals[v]} .") for (fe, fr), v in zip(facts, values)]
        context, spans = _join_passages(sentences)
        question = render(f"{rels[r]} {ents[e]} ?")
        if is_null:
            gp, gm = None, None
        else:
            gp = gold
            pa = spans[gold][0]
            head = f"{ents[e]} {rels[r]} "
            vs = pa + len(render(head).encode("utf-8"))
            gm = (vs, vs + len(render(vals[values[gold]]).encode("utf-8")))
        out.append(QAExample(f"{id_prefix}{n}", lang, lang, question, context, tuple(spans), gp, gm))
    return out


def toy_translations(examples, langs=("src", "cip")) -> dict:
    """Question translations into every other language in ``langs``."""
    table = {}
    for ex in examples:
        for lang in langs:
            if lang == ex.question_lang:
                continue
            if ex.question_lang == langs[0]:
                q = cipher(ex.question)
            else:
                q = ex.question.translate(str.maketrans(
                    CIPHER_ALPHABET + CIPHER_ALPHABET.upper(), SOURCE_ALPHABET + SOURCE_ALPHABET.upper()))
            table.setdefault(ex.id, []).append((q, lang))
    return table


def crosslingual_test_set(examples, langs=("src", "cip")) -> list:
    """Swap every question into the other language: the (Q_x, C_y) setting."""
    from dataclasses import replace

    trans = toy_translations(examples, langs)
    out = []
    for ex in examples:
        for q, lang in trans[ex.id]:
            out.append(replace(ex, id=f"{ex.id}@{lang}", question=q, question_lang=lang))
    return out
