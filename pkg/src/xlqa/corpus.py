"""Tokenization, byte-level BPE vocabulary, and ingestion of bitext and QA data.

Every type here is immutable once built and every function is a pure function
of its arguments, so loaders can be fanned out across files without changing
the output.
"""
from __future__ import annotations

import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .errors import FormatError, InputError, ValidationError

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
BYTE_OFFSET = len(SPECIAL_TOKENS)

# gold/predicted minimal answer: None (NULL), "YES", "NO", or a (start, end) byte span
Minimal = Union[None, str, tuple]


@dataclass(frozen=True)
class WordToken:
    surface: str
    byte_start: int
    byte_end: int
    subword_ids: tuple = ()


@dataclass(frozen=True)
class Sentence:
    language: str
    tokens: tuple
    raw_text: str

    @classmethod
    def from_text(cls, text: str, language: str, vocab: "Vocabulary | None" = None) -> "Sentence":
        tokens = tokenize(text)
        if vocab is not None:
            tokens = [encode_subwords(vocab, tok) for tok in tokens]
        return cls(language, tuple(tokens), text)

    @property
    def words(self) -> list:
        return [tok.surface for tok in self.tokens]

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class ParallelCorpus:
    source_lang: str
    target_lang: str
    pairs: tuple

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("parallel corpus must contain at least one sentence pair")
        for i, (src, tgt) in enumerate(self.pairs):
            if src.language != self.source_lang or tgt.language != self.target_lang:
                raise ValidationError(
                    f"pair {i}: languages ({src.language}, {tgt.language}) do not match "
                    f"corpus ({self.source_lang}, {self.target_lang})"
                )

    @classmethod
    def from_texts(cls, texts: Iterable, source_lang: str, target_lang: str, vocab=None) -> "ParallelCorpus":
        pairs = tuple(
            (Sentence.from_text(s, source_lang, vocab), Sentence.from_text(t, target_lang, vocab))
            for s, t in texts
        )
        return cls(source_lang, target_lang, pairs)

    def with_vocab(self, vocab: "Vocabulary") -> "ParallelCorpus":
        pairs = tuple(
            (Sentence.from_text(s.raw_text, s.language, vocab), Sentence.from_text(t.raw_text, t.language, vocab))
            for s, t in self.pairs
        )
        return ParallelCorpus(self.source_lang, self.target_lang, pairs)

    def __len__(self):
        return len(self.pairs)


# --------------------------------------------------------------------------
# tokenization


def _as_text(text) -> str:
    if isinstance(text, (bytes, bytearray)):
        try:
            return bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InputError(f"invalid UTF-8 at byte {exc.start}") from exc
    try:
        text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InputError(f"text is not encodable as UTF-8 at character {exc.start}") from exc
    return text


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text) -> list:
    """Split on Unicode whitespace, then peel leading/trailing punctuation.

    Each peeled punctuation character becomes its own token. Offsets are
    UTF-8 byte offsets into ``text``.
    """
    text = _as_text(text)
    # byte offset of every character boundary
    offsets = [0] * (len(text) + 1)
    pos = 0
    for i, ch in enumerate(text):
        offsets[i] = pos
        pos += len(ch.encode("utf-8"))
    offsets[len(text)] = pos

    tokens = []

    def emit(a, b):
        tokens.append(WordToken(text[a:b], offsets[a], offsets[b]))

    n = len(text)
    i = 0
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        a, b = i, j
        while a < b and _is_punct(text[a]):
            emit(a, a + 1)
            a += 1
        tail = []
        while b > a and _is_punct(text[b - 1]):
            tail.append(b - 1)
            b -= 1
        if a < b:
            emit(a, b)
        for k in reversed(tail):
            emit(k, k + 1)
        i = j
    return tokens


# --------------------------------------------------------------------------
# byte-level BPE


@dataclass(frozen=True)
class Vocabulary:
    """Byte-level BPE vocabulary.

    ``id_map`` keys are ``str`` for the four specials and ``bytes`` for every
    subword unit; ids 0-3 are specials, 4-259 the single bytes, then merges.
    """

    merges: tuple
    id_map: dict
    _ranks: dict = field(default_factory=dict, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks.update({pair: r for r, pair in enumerate(self.merges)})

    @property
    def pad_id(self):
        return PAD

    @property
    def unk_id(self):
        return UNK

    @property
    def cls_id(self):
        return CLS

    @property
    def sep_id(self):
        return SEP

    def __len__(self):
        return len(self.id_map)

    def token_bytes(self, idx: int) -> bytes:
        if not hasattr(self, "_inverse"):
            object.__setattr__(self, "_inverse", {v: k for k, v in self.id_map.items()})
        tok = self._inverse[idx]
        return b"" if isinstance(tok, str) else tok

    def split(self, word: bytes) -> tuple:
        """Apply merges by learned rank until none applies."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = [word[i:i + 1] for i in range(len(word))]
        ranks = self._ranks
        while len(symbols) > 1:
            best, best_rank = None, None
            for k in range(len(symbols) - 1):
                r = ranks.get((symbols[k], symbols[k + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = (symbols[k], symbols[k + 1]), r
            if best is None:
                break
            merged = []
            k = 0
            while k < len(symbols):
                if k < len(symbols) - 1 and (symbols[k], symbols[k + 1]) == best:
                    merged.append(symbols[k] + symbols[k + 1])
                    k += 2
                else:
                    merged.append(symbols[k])
                    k += 1
            symbols = merged
        out = tuple(symbols)
        self._cache[word] = out
        return out

    def encode_word(self, word: str) -> tuple:
        return tuple(self.id_map[piece] for piece in self.split(word.encode("utf-8")))

    def to_json(self) -> dict:
        return {
            "version": 1,
            "merges": [[a.hex(), b.hex()] for a, b in self.merges],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Vocabulary":
        if obj.get("version") != 1:
            raise FormatError(f"unsupported vocabulary version {obj.get('version')!r}")
        merges = tuple((bytes.fromhex(a), bytes.fromhex(b)) for a, b in obj["merges"])
        return _vocab_from_merges(merges)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _vocab_from_merges(merges) -> Vocabulary:
    id_map = {name: i for i, name in enumerate(SPECIAL_TOKENS)}
    for b in range(256):
        id_map[bytes([b])] = BYTE_OFFSET + b
    for a, b in merges:
        id_map.setdefault(a + b, len(id_map))
    return Vocabulary(tuple(merges), id_map)


def learn_bpe(word_counts: Mapping, merge_count: int) -> tuple:
    """Greedy BPE over byte strings; ties go to the lexicographically smallest pair."""
    if merge_count < 0:
        raise InputError("merge_count must be >= 0")
    words = {}
    for w, c in word_counts.items():
        bw = w.encode("utf-8") if isinstance(w, str) else bytes(w)
        if bw:
            key = tuple(bw[i:i + 1] for i in range(len(bw)))
            words[key] = words.get(key, 0) + c
    merges = []
    for _ in range(merge_count):
        pairs = Counter()
        for syms, c in words.items():
            for k in range(len(syms) - 1):
                pairs[syms[k], syms[k + 1]] += c
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        a, b = best
        merged_words = {}
        for syms, c in words.items():
            out = []
            k = 0
            while k < len(syms):
                if k < len(syms) - 1 and syms[k] == a and syms[k + 1] == b:
                    out.append(a + b)
                    k += 2
                else:
                    out.append(syms[k])
                    k += 1
            key = tuple(out)
            merged_words[key] = merged_words.get(key, 0) + c
        words = merged_words
    return tuple(merges)


def build_vocab(corpora: Sequence, merge_count: int, extra_texts: Iterable = ()) -> Vocabulary:
    if not corpora and not extra_texts:
        raise InputError("build_vocab needs at least one corpus")
    counts = Counter()
    for corpus in corpora:
        for src, tgt in corpus.pairs:
            counts.update(src.words)
            counts.update(tgt.words)
    for text in extra_texts:
        counts.update(tok.surface for tok in tokenize(text))
    return _vocab_from_merges(learn_bpe(counts, merge_count))


def encode_subwords(vocab: Vocabulary, token: WordToken) -> WordToken:
    return replace(token, subword_ids=vocab.encode_word(token.surface))


# --------------------------------------------------------------------------
# bitext


def _read_lines(path, label):
    data = Path(path).read_bytes()
    raw = data.split(b"\n")
    if raw and raw[-1] == b"":
        raw.pop()
    lines = []
    for n, line in enumerate(raw, start=1):
        try:
            lines.append(line.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise InputError(f"{label} file {path}: invalid UTF-8 on line {n}") from exc
    return lines


def load_parallel(src_path, tgt_path, src_lang: str, tgt_lang: str, vocab=None) -> ParallelCorpus:
    src_lines = _read_lines(src_path, "source")
    tgt_lines = _read_lines(tgt_path, "target")
    if len(src_lines) != len(tgt_lines):
        raise FormatError(
            f"line count mismatch: {src_path} has {len(src_lines)} lines, {tgt_path} has {len(tgt_lines)}"
        )
    texts = []
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        s_blank, t_blank = not s.strip(), not t.strip()
        if s_blank and t_blank:
            continue
        if s_blank or t_blank:
            raise FormatError(f"line {n}: blank on one side only (misaligned bitext?)")
        texts.append((s, t))
    if not texts:
        raise FormatError(f"no sentence pairs in {src_path} / {tgt_path}")
    return ParallelCorpus.from_texts(texts, src_lang, tgt_lang, vocab)


# --------------------------------------------------------------------------
# QA data


@dataclass(frozen=True)
class QAExample:
    id: str
    question_lang: str
    context_lang: str
    question: str
    context: str
    passages: tuple
    gold_passage: "int | None"
    gold_minimal: Minimal = None

    def passage_text(self, k: int) -> str:
        a, b = self.passages[k]
        return self.context.encode("utf-8")[a:b].decode("utf-8")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question_lang": self.question_lang,
            "context_lang": self.context_lang,
            "question": self.question,
            "context": self.context,
            "passages": [list(p) for p in self.passages],
            "gold_passage": self.gold_passage,
            "gold_minimal": minimal_to_json(self.gold_minimal),
        }


def minimal_to_json(m: Minimal):
    if m is None:
        return None
    if m in ("YES", "NO"):
        return {"yesno": m}
    return {"span": [int(m[0]), int(m[1])]}


def minimal_from_json(obj, where="gold_minimal") -> Minimal:
    if obj is None:
        return None
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ValidationError(f"{where}: expected null, {{'span': [s, e]}} or {{'yesno': ...}}")
    if "yesno" in obj:
        if obj["yesno"] not in ("YES", "NO"):
            raise ValidationError(f"{where}: yesno must be YES or NO, got {obj['yesno']!r}")
        return obj["yesno"]
    if "span" in obj:
        span = obj["span"]
        if (not isinstance(span, list) or len(span) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in span)):
            raise ValidationError(f"{where}: span must be two integers")
        return (span[0], span[1])
    raise ValidationError(f"{where}: unknown key {next(iter(obj))!r}")


def _char_boundaries(text: str) -> set:
    bounds = {0}
    pos = 0
    for ch in text:
        pos += len(ch.encode("utf-8"))
        bounds.add(pos)
    return bounds


def validate_example(ex: QAExample) -> QAExample:
    def bad(fieldname, msg):
        raise ValidationError(f"record {ex.id!r}, field {fieldname}: {msg}")

    n_bytes = len(ex.context.encode("utf-8"))
    bounds = _char_boundaries(ex.context)
    for k, (a, b) in enumerate(ex.passages):
        if not (0 <= a <= b <= n_bytes):
            bad("passages", f"passage {k} [{a}, {b}) outside context of {n_bytes} bytes")
        if a not in bounds or b not in bounds:
            bad("passages", f"passage {k} offsets are not on character boundaries")
        if k and a < ex.passages[k - 1][1]:
            bad("passages", f"passage {k} overlaps or precedes passage {k - 1}")
    if ex.gold_passage is not None:
        if not 0 <= ex.gold_passage < len(ex.passages):
            bad("gold_passage", f"index {ex.gold_passage} but only {len(ex.passages)} passages")
    m = ex.gold_minimal
    if m is not None:
        if ex.gold_passage is None:
            bad("gold_minimal", "minimal answer given but gold_passage is null")
        if isinstance(m, tuple):
            s, e = m
            pa, pb = ex.passages[ex.gold_passage]
            if not (pa <= s <= e <= pb):
                bad("gold_minimal", f"span [{s}, {e}) outside gold passage [{pa}, {pb})")
            if s not in bounds or e not in bounds:
                bad("gold_minimal", "span offsets are not on character boundaries")
    return ex


_QA_FIELDS = {
    "id": str, "question_lang": str, "context_lang": str, "question": str, "context": str,
    "passages": list,
}


def example_from_json(rec: Mapping, line_no=None) -> QAExample:
    where = f"line {line_no}" if line_no is not None else "record"
    if not isinstance(rec, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    rid = rec.get("id", f"<{where}>")
    for name, typ in _QA_FIELDS.items():
        if not isinstance(rec.get(name), typ):
            raise ValidationError(f"record {rid!r}, field {name}: missing or not a {typ.__name__}")
    passages = []
    for p in rec["passages"]:
        if (not isinstance(p, list) or len(p) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in p)):
            raise ValidationError(f"record {rid!r}, field passages: entries must be [start, end] integers")
        passages.append((p[0], p[1]))
    gp = rec.get("gold_passage")
    if gp is not None and (not isinstance(gp, int) or isinstance(gp, bool)):
        raise ValidationError(f"record {rid!r}, field gold_passage: must be an integer or null")
    try:
        gm = minimal_from_json(rec.get("gold_minimal"))
    except ValidationError as exc:
        raise ValidationError(f"record {rid!r}, field {exc}") from None
    ex = QAExample(rec["id"], rec["question_lang"], rec["context_lang"], rec["question"],
                   rec["context"], tuple(passages), gp, gm)
    return validate_example(ex)


def load_qa_dataset(path) -> list:
    out = []
    seen = set()
    for n, line in enumerate(_read_lines(path, "QA dataset"), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {n}: invalid JSON ({exc.msg})") from None
        ex = example_from_json(rec, n)
        if ex.id in seen:
            raise ValidationError(f"record {ex.id!r}, field id: duplicate id")
        seen.add(ex.id)
        out.append(ex)
    return out


def dumps_jsonl(records: Iterable) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def write_qa_dataset(examples: Iterable, path) -> None:
    Path(path).write_text(dumps_jsonl(ex.to_json() for ex in examples), encoding="utf-8")


def load_translations(path) -> dict:
    """Read ``{id, lang, question}`` lines into ``id -> [(question, lang), ...]``."""
    table = {}
    for n, line in enumerate(_read_lines(path, "translations"), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {n}: invalid JSON ({exc.msg})") from None
        for name in ("id", "lang", "question"):
            if not isinstance(rec.get(name), str):
                raise ValidationError(f"{path}: line {n}, field {name}: missing or not a string")
        table.setdefault(rec["id"], []).append((rec["question"], rec["lang"]))
    return table


def augment_crosslingual(examples: Sequence, translations: Mapping) -> list:
    """Append translated-question copies of ``examples``.

    ``translations`` maps an example id to ``(question, lang)`` or to a list
    of such tuples. Context, passages and gold answers are shared verbatim.
    """
    by_id = {ex.id: ex for ex in examples}
    wanted = {}
    for tid, value in translations.items():
        items = [value] if isinstance(value, tuple) else list(value)
        if tid not in by_id:
            logger.warning("translation for unknown example id %r skipped", tid)
            continue
        ex = by_id[tid]
        for question, lang in items:
            if lang == ex.context_lang:
                raise ValidationError(
                    f"translation for {tid!r} is in the context language {lang!r}")
        wanted[tid] = items
    out = list(examples)
    for ex in examples:
        for question, lang in wanted.get(ex.id, ()):
            out.append(replace(ex, id=f"{ex.id}#aug-{lang}", question=question, question_lang=lang))
    return out
