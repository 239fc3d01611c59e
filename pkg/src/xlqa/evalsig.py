"""TyDi-style F1 for passage selection and minimal answers, paired bootstrap
significance, correctness cross-tabulation and table rendering.

Precision is measured over non-null predictions and recall over non-null
golds. For minimal answers a span prediction earns byte-overlap F1 as
partial credit; YES/NO earn 1 only on an exact match.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .errors import InputError

PASSAGE = "passage"
MINIMAL = "minimal"


def _pred_index(preds, golds) -> dict:
    gold_ids = {g.id for g in golds}
    out = {}
    for p in preds:
        if p.id in out:
            raise InputError(f"duplicate prediction for id {p.id!r}")
        if p.id not in gold_ids:
            raise InputError(f"prediction for unknown id {p.id!r}")
        out[p.id] = p
    return out


def _prf(correct, n_pred, n_gold):
    correct, n_pred, n_gold = float(correct), float(n_pred), float(n_gold)
    precision = correct / n_pred if n_pred else 0.0
    recall = correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def span_f1(pred, gold) -> float:
    """Byte-overlap F1 of two half-open ``(start, end)`` spans."""
    ps, pe = pred
    gs, ge = gold
    if ps > pe or gs > ge:
        raise InputError(f"invalid span: pred {pred}, gold {gold}")
    if pe - ps == 0 or ge - gs == 0:
        return 1.0 if (ps, pe) == (gs, ge) else 0.0
    overlap = max(0, min(pe, ge) - max(ps, gs))
    if overlap == 0:
        return 0.0
    p = overlap / (pe - ps)
    r = overlap / (ge - gs)
    return 2 * p * r / (p + r)


def minimal_match(pred, gold) -> float:
    """Per-example minimal-answer credit; NULL vs NULL counts as a full match."""
    if pred is None or gold is None:
        return 1.0 if pred is None and gold is None else 0.0
    if isinstance(pred, tuple) and isinstance(gold, tuple):
        return span_f1(pred, gold)
    return 1.0 if pred == gold else 0.0


@dataclass(frozen=True)
class ScoredExample:
    id: str
    question_lang: str
    context_lang: str
    gold_non_null: bool
    pred_non_null: bool
    match: bool
    minimal_f1: float
    minimal_gold_non_null: bool = False
    minimal_pred_non_null: bool = False


def score_examples(preds, golds) -> list:
    index = _pred_index(preds, golds)
    out = []
    for g in golds:
        p = index.get(g.id)
        pp = None if p is None else p.passage_pred
        pm = None if p is None or pp is None else p.minimal_pred
        out.append(ScoredExample(
            g.id, g.question_lang, g.context_lang,
            gold_non_null=g.gold_passage is not None,
            pred_non_null=pp is not None,
            match=pp == g.gold_passage,
            minimal_f1=minimal_match(pm, g.gold_minimal),
            minimal_gold_non_null=g.gold_minimal is not None,
            minimal_pred_non_null=pm is not None,
        ))
    return out


def _contributions(scored, metric) -> np.ndarray:
    """Rows of (credit, pred non-null, gold non-null) per example."""
    rows = []
    for s in scored:
        if metric == PASSAGE:
            credit = 1.0 if (s.match and s.pred_non_null) else 0.0
            rows.append((credit, s.pred_non_null, s.gold_non_null))
        elif metric == MINIMAL:
            both = s.minimal_pred_non_null and s.minimal_gold_non_null
            rows.append((s.minimal_f1 if both else 0.0, s.minimal_pred_non_null, s.minimal_gold_non_null))
        else:
            raise InputError(f"unknown metric {metric!r}")
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def passage_f1(preds, golds):
    """``(precision, recall, f1)``; a missing prediction counts as NULL."""
    c = _contributions(score_examples(preds, golds), PASSAGE).sum(axis=0)
    return _prf(*c)


def minimal_answer_prf(preds, golds):
    c = _contributions(score_examples(preds, golds), MINIMAL).sum(axis=0)
    return _prf(*c)


def minimal_answer_f1(preds, golds) -> float:
    return minimal_answer_prf(preds, golds)[2]


# --------------------------------------------------------------------------
# significance


@dataclass(frozen=True)
class SignificanceResult:
    p_value: float
    win_fraction: float
    resamples: int
    seed: int
    metric: str = PASSAGE
    score_a: float = 0.0
    score_b: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def _batch_f1(sums):
    c, npred, ngold = sums[:, 0], sums[:, 1], sums[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(npred > 0, c / np.where(npred > 0, npred, 1), 0.0)
        r = np.where(ngold > 0, c / np.where(ngold > 0, ngold, 1), 0.0)
        f = np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1), 0.0)
    return f


def bootstrap_significance(preds_a, preds_b, golds, metric=PASSAGE, resamples=1000, seed=0):
    """One-sided paired bootstrap: is system A better than system B?

    ``p_value`` is the fraction of resamples where A does not beat B
    (ties count against A).
    """
    if resamples < 100:
        raise InputError("use at least 100 bootstrap resamples")
    ids_a, ids_b = {p.id for p in preds_a}, {p.id for p in preds_b}
    if ids_a != ids_b:
        raise InputError(f"systems cover different ids ({len(ids_a ^ ids_b)} differ)")
    ca = _contributions(score_examples(preds_a, golds), metric)
    cb = _contributions(score_examples(preds_b, golds), metric)
    n = len(golds)
    if n == 0:
        raise InputError("no examples to resample")
    rng = np.random.default_rng(seed)
    weights = rng.multinomial(n, np.full(n, 1.0 / n), size=resamples).astype(np.float64)
    fa = _batch_f1(weights @ ca)
    fb = _batch_f1(weights @ cb)
    wins = int(np.count_nonzero(fa > fb))
    return SignificanceResult(
        p_value=float((resamples - wins) / resamples),
        win_fraction=float(wins / resamples),
        resamples=resamples,
        seed=seed,
        metric=metric,
        score_a=_prf(*ca.sum(axis=0))[2],
        score_b=_prf(*cb.sum(axis=0))[2],
    )


# --------------------------------------------------------------------------
# correctness cross-tab


@dataclass(frozen=True)
class Crosstab:
    """Joint fully-correct / fully-wrong minimal-answer counts of two systems."""

    correct_correct: int
    correct_wrong: int
    wrong_correct: int
    wrong_wrong: int
    excluded: int

    def total(self) -> int:
        return self.correct_correct + self.correct_wrong + self.wrong_correct + self.wrong_wrong

    def to_json(self) -> dict:
        return asdict(self)

    def render(self, name_x="X", name_y="Y") -> str:
        return (f"{name_x} \\ {name_y}\tcorrect\twrong\n"
                f"correct\t{self.correct_correct}\t{self.correct_wrong}\n"
                f"wrong\t{self.wrong_correct}\t{self.wrong_wrong}\n")


def crosstab_correctness(preds_x, preds_y, golds) -> Crosstab:
    """Tally examples fully right (F1 = 1) or fully wrong (F1 = 0) under both systems."""
    if {p.id for p in preds_x} != {p.id for p in preds_y}:
        raise InputError("systems cover different ids")
    sx = score_examples(preds_x, golds)
    sy = score_examples(preds_y, golds)
    cells = {(True, True): 0, (True, False): 0, (False, True): 0, (False, False): 0}
    excluded = 0
    for a, b in zip(sx, sy):
        if a.minimal_f1 not in (0.0, 1.0) or b.minimal_f1 not in (0.0, 1.0):
            excluded += 1
            continue
        cells[a.minimal_f1 == 1.0, b.minimal_f1 == 1.0] += 1
    return Crosstab(cells[True, True], cells[True, False], cells[False, True], cells[False, False], excluded)


# --------------------------------------------------------------------------
# reports


@dataclass
class Cell:
    passage_f1: float
    minimal_f1: float
    count: int


@dataclass
class EvalReport:
    name: str = "system"
    cells: dict = field(default_factory=dict)  # (question_lang, context_lang) -> Cell
    # (task, question_lang, context_lang) -> p-value against a reference system
    significance: dict = field(default_factory=dict)
    alpha: float = 0.05

    def average(self, task=PASSAGE, keys=None) -> "float | None":
        keys = list(self.cells) if keys is None else list(keys)
        values = [getattr(self.cells[k], f"{task}_f1") for k in keys]
        return float(np.mean(values)) if values else None

    def crosslingual_keys(self) -> list:
        return [k for k in self.cells if k[0] != k[1]]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "cells": [{"question_lang": q, "context_lang": c, **asdict(cell)}
                      for (q, c), cell in self.cells.items()],
            "average": {PASSAGE: self.average(PASSAGE), MINIMAL: self.average(MINIMAL)},
            "significance": [{"task": t, "question_lang": q, "context_lang": c, "p_value": p}
                             for (t, q, c), p in self.significance.items()],
            "alpha": self.alpha,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalReport":
        cells = {(c["question_lang"], c["context_lang"]): Cell(c["passage_f1"], c["minimal_f1"], c["count"])
                 for c in obj["cells"]}
        sig = {(r["task"], r["question_lang"], r["context_lang"]): r["p_value"] for r in obj.get("significance", [])}
        return cls(obj.get("name", "system"), cells, sig, obj.get("alpha", 0.05))

    def marked(self, task, key) -> bool:
        p = self.significance.get((task,) + tuple(key))
        return p is not None and p < self.alpha


def evaluate(preds, golds, name="system") -> EvalReport:
    """Per (question language, context language) F1 for both tasks."""
    _pred_index(preds, golds)
    groups = {}
    for g in golds:
        groups.setdefault((g.question_lang, g.context_lang), []).append(g)
    by_id = {p.id: p for p in preds}
    report = EvalReport(name)
    for key, gs in groups.items():
        ps = [by_id[g.id] for g in gs if g.id in by_id]
        report.cells[key] = Cell(passage_f1(ps, gs)[2], minimal_answer_f1(ps, gs), len(gs))
    return report


def annotate_significance(report, preds, reference_preds, golds, resamples=1000, seed=0, alpha=0.05):
    """Per-cell one-sided bootstrap of ``preds`` against ``reference_preds``.

    Cells where the report's system is better at ``p < alpha`` render with a
    trailing ``*``.
    """
    report.alpha = alpha
    by_a = {p.id: p for p in preds}
    by_b = {p.id: p for p in reference_preds}
    for key in report.cells:
        gs = [g for g in golds if (g.question_lang, g.context_lang) == key]
        pa = [by_a[g.id] for g in gs if g.id in by_a]
        pb = [by_b[g.id] for g in gs if g.id in by_b]
        for task in (PASSAGE, MINIMAL):
            res = bootstrap_significance(pa, pb, gs, task, resamples, seed)
            report.significance[(task,) + key] = res.p_value
    return report


def _pct(v) -> str:
    return f"{100.0 * v:.1f}"


def _table(reports):
    keys = []
    for r in reports:
        keys.extend(k for k in r.cells if k not in keys)
    header = ["system", "task"] + [f"Q_{q},C_{c}" for q, c in keys] + ["avg"]
    rows = []
    for r in reports:
        for task in (PASSAGE, MINIMAL):
            shown = [_pct(getattr(r.cells[k], f"{task}_f1")) if k in r.cells else "-" for k in keys]
            present = [float(s) for s in shown if s != "-"]
            avg = f"{sum(present) / len(present):.1f}" if present else "-"
            shown = [v + ("*" if k in r.cells and r.marked(task, k) else "") for v, k in zip(shown, keys)]
            rows.append([r.name, task] + shown + [avg])
    return header, rows


def render_report(report, fmt="tsv") -> str:
    """Render one report (or a list) as TSV or markdown, F1 x 100 to one decimal.

    The ``avg`` column is the mean of the displayed cell values.
    """
    reports = report if isinstance(report, (list, tuple)) else [report]
    header, rows = _table([r for r in reports if r.cells] if any(r.cells for r in reports) else [])
    if fmt == "tsv":
        return "".join("\t".join(line) + "\n" for line in [header] + rows)
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise InputError(f"unknown report format {fmt!r}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"
