"""Extractive QA on top of the encoder: passage selection and minimal answers.

Each (question, passage) pair is encoded separately as
``[CLS] question [SEP] passage [SEP]``. The [CLS] vector feeds a passage
scorer and a four-way answer-type head (SPAN, YES, NO, NULL); passage
positions feed start/end scorers. A learned scalar competes with the passage
scores as the NULL option.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .corpus import CLS, SEP, Vocabulary, minimal_from_json, minimal_to_json, tokenize
from .encoder import (EncoderConfig, Params, backprop, encoder_param_names, forward, load_params,
                      save_params, track)
from .errors import FormatError, InputError, TrainingError
from .optim import clip_gradients, make_optimizer

logger = logging.getLogger(__name__)

SPAN, YES, NO, NULL_TYPE = 0, 1, 2, 3
ANSWER_TYPES = ("SPAN", "YES", "NO", "NULL")
HEAD_NAMES = ("qa.passage_w", "qa.passage_b", "qa.null", "qa.type_W", "qa.type_b", "qa.start_w", "qa.end_w")


@dataclass(frozen=True)
class ModelInput:
    ids: list
    word_ranges: list
    passage_start: int
    offsets: list  # context byte range of each passage subword, in order

    @property
    def passage_positions(self) -> range:
        return range(self.passage_start, self.passage_start + len(self.offsets))


def _subword_pieces(vocab: Vocabulary, surface: str, byte_start: int):
    pos = byte_start
    for piece in vocab.split(surface.encode("utf-8")):
        yield vocab.id_map[piece], pos, pos + len(piece)
        pos += len(piece)


def build_model_input(vocab: Vocabulary, question: str, passage_text: str, max_len: int,
                      passage_offset: int = 0) -> ModelInput:
    """Frame ``[CLS] q [SEP] p [SEP]``, right-truncating the passage to ``max_len``.

    ``passage_offset`` is the passage's byte offset inside its context so the
    offset map is expressed in context bytes.
    """
    ids, ranges = [CLS], []
    for tok in tokenize(question):
        pieces = list(_subword_pieces(vocab, tok.surface, 0))
        ranges.append((len(ids), len(ids) + len(pieces)))
        ids.extend(p[0] for p in pieces)
    if len(ids) - 1 > max_len - 3:
        raise InputError(f"question of {len(ids) - 1} subwords does not fit max_len={max_len}")
    ids.append(SEP)
    passage_start = len(ids)
    budget = max_len - passage_start - 1
    offsets = []
    for tok in tokenize(passage_text):
        start = len(ids)
        for sid, a, b in _subword_pieces(vocab, tok.surface, passage_offset + tok.byte_start):
            if len(offsets) >= budget:
                break
            ids.append(sid)
            offsets.append((a, b))
        if len(ids) > start:
            ranges.append((start, len(ids)))
        if len(offsets) >= budget:
            break
    ids.append(SEP)
    return ModelInput(ids, ranges, passage_start, offsets)


@dataclass
class QAPrediction:
    id: str
    passage_pred: "int | None"
    passage_score: float
    minimal_pred: object = None
    minimal_score: float = 0.0

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "passage_pred": self.passage_pred,
            "minimal_pred": minimal_to_json(self.minimal_pred),
            "passage_score": self.passage_score,
            "minimal_score": self.minimal_score,
        }

    @classmethod
    def from_json(cls, rec) -> "QAPrediction":
        return cls(rec["id"], rec.get("passage_pred"), float(rec.get("passage_score", 0.0)),
                   minimal_from_json(rec.get("minimal_pred"), "minimal_pred"),
                   float(rec.get("minimal_score", 0.0)))


def write_predictions(preds: Sequence, path) -> None:
    Path(path).write_text("".join(json.dumps(p.to_json(), ensure_ascii=False) + "\n" for p in preds),
                          encoding="utf-8")


def read_predictions(path) -> list:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {n}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
            raise FormatError(f"{path}: line {n}: prediction needs a string id")
        out.append(QAPrediction.from_json(rec))
    return out


class QAModel:
    """Encoder parameters plus QA heads, the vocabulary, and decoding limits."""

    def __init__(self, params: Params, vocab: Vocabulary, max_len=None, max_span_subwords=30):
        self.params = params
        self.vocab = vocab
        self.max_len = max_len or params.config.max_seq_len
        if self.max_len > params.config.max_seq_len:
            raise InputError("max_len exceeds the encoder's max_seq_len")
        self.max_span_subwords = max_span_subwords

    @property
    def config(self) -> EncoderConfig:
        return self.params.config

    @classmethod
    def from_encoder(cls, encoder: Params, vocab: Vocabulary, seed=0, max_len=None, max_span_subwords=30):
        """Attach freshly initialised heads to raw or alignment-tuned encoder params."""
        H = encoder.config.hidden_dim
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(H)
        tensors = {k: np.array(encoder[k], dtype=np.float64, copy=True)
                   for k in encoder_param_names(encoder.config)}
        tensors.update({
            "qa.passage_w": rng.uniform(-scale, scale, H),
            "qa.passage_b": np.zeros(()),
            "qa.null": np.zeros(()),
            "qa.type_W": rng.uniform(-scale, scale, (H, 4)),
            "qa.type_b": np.zeros(4),
            "qa.start_w": rng.uniform(-scale, scale, H),
            "qa.end_w": rng.uniform(-scale, scale, H),
        })
        return cls(Params(encoder.config, tensors), vocab, max_len, max_span_subwords)

    def copy(self) -> "QAModel":
        return QAModel(self.params.copy(), self.vocab, self.max_len, self.max_span_subwords)

    def encoder_params(self) -> Params:
        return Params(self.config, {k: self.params[k] for k in encoder_param_names(self.config)})

    def save(self, path, extra=None) -> None:
        meta = {"max_len": self.max_len, "max_span_subwords": self.max_span_subwords,
                "vocab": self.vocab.to_json()}
        meta.update(extra or {})
        save_params(self.params, path, meta)

    @classmethod
    def load(cls, path) -> "QAModel":
        params, extra = load_params(path)
        if "vocab" not in extra:
            raise FormatError(f"{path}: checkpoint has no QA heads/vocabulary")
        return cls(params, Vocabulary.from_json(extra["vocab"]), extra["max_len"], extra["max_span_subwords"])


# --------------------------------------------------------------------------
# scoring


@dataclass
class _Encoded:
    inp: ModelInput
    hidden: object  # Tensor (n, H)


def _encode_passage(source, model: QAModel, example, k) -> _Encoded:
    a, _ = example.passages[k]
    inp = build_model_input(model.vocab, example.question, example.passage_text(k), model.max_len, a)
    return _Encoded(inp, forward(source, inp.ids))


def _heads(source):
    if hasattr(source, "vars"):
        return source.vars
    return {k: ad.Tensor(source[k]) for k in HEAD_NAMES}


def _passage_logits(source, encoded):
    h = _heads(source)
    parts = [ad.rows(e.hidden, 0, 1) @ h["qa.passage_w"] + h["qa.passage_b"] for e in encoded]
    return ad.concat(parts + [h["qa.null"]])


def _type_logits(source, enc):
    h = _heads(source)
    return ad.reshape(ad.rows(enc.hidden, 0, 1) @ h["qa.type_W"], (4,)) + h["qa.type_b"]


def _span_logits(source, enc):
    h = _heads(source)
    lo, hi = enc.inp.passage_start, enc.inp.passage_start + len(enc.inp.offsets)
    tokens = ad.rows(enc.hidden, lo, hi)
    return tokens @ h["qa.start_w"], tokens @ h["qa.end_w"]


def _argmax_first(values) -> int:
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def score_passages(model: QAModel, example, _cache=None):
    """Return ``(passage_scores, null_score)`` for ``example``."""
    encoded = [_encode_passage(model.params, model, example, k) for k in range(len(example.passages))]
    if _cache is not None:
        _cache.extend(encoded)
    logits = _passage_logits(model.params, encoded).data
    return [float(v) for v in logits[:-1]], float(logits[-1])


def choose_passage(scores, null_score):
    """Lowest-index argmax; NULL only when it beats every passage strictly."""
    if not scores:
        return None, null_score
    best = _argmax_first(scores)
    if null_score > scores[best]:
        return None, null_score
    return best, scores[best]


def _snap(context_bytes: bytes, start: int, end: int):
    # widen to UTF-8 character boundaries (continuation bytes are 10xxxxxx)
    while start > 0 and (context_bytes[start] & 0xC0) == 0x80:
        start -= 1
    while end < len(context_bytes) and (context_bytes[end] & 0xC0) == 0x80:
        end += 1
    return start, end


def decode_minimal(type_logits, start_logits, end_logits, offsets, max_span, context_bytes=None):
    """Pick the answer type, and for SPAN the best span mapped to context bytes."""
    kind = _argmax_first(list(type_logits))
    if kind == SPAN:
        if len(offsets) == 0:
            return None, float(type_logits[NULL_TYPE])
        s, e, score = kernels.best_span(np.ascontiguousarray(start_logits, dtype=np.float64),
                                        np.ascontiguousarray(end_logits, dtype=np.float64), max_span)
        a, b = offsets[s][0], offsets[e][1]
        if context_bytes is not None:
            a, b = _snap(context_bytes, a, b)
        return (a, b), float(score)
    if kind == YES:
        return "YES", float(type_logits[YES])
    if kind == NO:
        return "NO", float(type_logits[NO])
    return None, float(type_logits[NULL_TYPE])


def score_minimal(model: QAModel, example, chosen_passage, _encoded=None):
    """Return ``(minimal_answer, score)`` inside ``chosen_passage``."""
    if chosen_passage is None:
        raise InputError("score_minimal needs a passage; NULL passage implies a NULL answer")
    enc = _encoded or _encode_passage(model.params, model, example, chosen_passage)
    start, end = _span_logits(model.params, enc)
    return decode_minimal(_type_logits(model.params, enc).data, start.data, end.data,
                          enc.inp.offsets, model.max_span_subwords, example.context.encode("utf-8"))


def predict_one(model: QAModel, example) -> QAPrediction:
    cache = []
    scores, null = score_passages(model, example, cache)
    k, pscore = choose_passage(scores, null)
    if k is None:
        return QAPrediction(example.id, None, pscore, None, 0.0)
    minimal, mscore = score_minimal(model, example, k, cache[k])
    return QAPrediction(example.id, k, pscore, minimal, mscore)


def predict(model: QAModel, examples: Sequence) -> list:
    return [predict_one(model, ex) for ex in examples]


# --------------------------------------------------------------------------
# training


@dataclass
class TaskTuneConfig:
    learning_rate: float = 0.002
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise InputError("task-tune config: learning_rate >= 0, epochs and batch_size > 0")


def _span_positions(inp: ModelInput, span):
    s, e = span
    start = end = None
    for i, (a, b) in enumerate(inp.offsets):
        if start is None and b > s:
            start = i
        if a < e:
            end = i
    if start is None or end is None or start > end:
        return None
    return start, end


def example_loss(source, model: QAModel, example):
    """Joint cross-entropy for one example (passage + answer type + start/end)."""
    encoded = [_encode_passage(source, model, example, k) for k in range(len(example.passages))]
    target = len(encoded) if example.gold_passage is None else example.gold_passage
    loss = ad.log_softmax_pick(_passage_logits(source, encoded), target)
    if example.gold_passage is None:
        return loss
    enc = encoded[example.gold_passage]
    gm = example.gold_minimal
    positions = None
    if gm is None:
        kind = NULL_TYPE
    elif gm == "YES":
        kind = YES
    elif gm == "NO":
        kind = NO
    else:
        positions = _span_positions(enc.inp, gm)
        kind = SPAN if positions is not None else NULL_TYPE
    loss = loss + ad.log_softmax_pick(_type_logits(source, enc), kind)
    if positions is not None:
        start, end = _span_logits(source, enc)
        loss = loss + ad.log_softmax_pick(start, positions[0]) + ad.log_softmax_pick(end, positions[1])
    return loss


def task_tune(model: QAModel, examples: Sequence, config: TaskTuneConfig):
    """Train every parameter jointly on all examples; returns ``(model, trace)``.

    ``trace[e]`` is the mean per-example loss over epoch ``e``. The input
    model is left unchanged.
    """
    if not examples:
        raise InputError("task_tune needs at least one example")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    trace = []
    n = len(examples)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(0, n, config.batch_size):
            batch = [examples[j] for j in order[b:b + config.batch_size]]
            tracked = track(model.params)
            total = ad.Tensor(np.asarray(0.0))
            for ex in batch:
                total = total + example_loss(tracked, model, ex)
            value = total.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b // config.batch_size}",
                                    epoch=epoch, batch=b // config.batch_size, loss=value)
            epoch_loss += value
            if config.learning_rate > 0:
                grads = backprop(tracked, ad.mul(total, 1.0 / len(batch)))
                optimizer.step(model.params, clip_gradients(grads, config.clip_norm))
        trace.append(epoch_loss / n)
        logger.info("task-tune epoch %d loss %.6f", epoch, trace[-1])
    return model, trace
