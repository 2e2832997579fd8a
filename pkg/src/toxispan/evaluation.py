"""Span-level and token-level scoring.

The span metric is the standard toxic-spans score: a per-document
F1 over character offsets, averaged over documents. A document whose gold
and prediction are both empty scores 1; if exactly one is empty it scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from toxispan.textproc import tokenize


def span_f1(pred: Iterable[int], gold: Iterable[int]) -> float:
    """Character-offset F1 for one document.

    >>> round(span_f1([3, 4, 5], [4, 5, 6]), 4)
    0.6667
    """
    a, g = set(pred), set(gold)
    if not a and not g:
        return 1.0
    if not a or not g:
        return 0.0
    return 2 * len(a & g) / (len(a) + len(g))


def _aligned(preds: Mapping[int, Iterable[int]], golds: Mapping[int, Iterable[int]]):
    missing = sorted(set(golds) - set(preds))
    if missing:
        raise KeyError(f"no prediction for doc ids {missing}")
    return [(doc_id, preds[doc_id], golds[doc_id]) for doc_id in sorted(golds)]


def corpus_span_f1(preds: Mapping[int, Iterable[int]], golds: Mapping[int, Iterable[int]]) -> float:
    """Mean per-document span F1 over every document in ``golds``."""
    rows = _aligned(preds, golds)
    if not rows:
        raise ValueError("no documents to score")
    return sum(span_f1(p, g) for _, p, g in rows) / len(rows)


def token_f1(pred_labels: Sequence[int], gold_labels: Sequence[int]) -> tuple[float, float, float]:
    """Micro precision, recall and F1 for the toxic class.

    Precision (recall) is 0 with no predicted (gold) positives; F1 is 1 only
    in the degenerate case where neither side has any positive.
    """
    if len(pred_labels) != len(gold_labels):
        raise ValueError(f"{len(pred_labels)} predicted labels vs {len(gold_labels)} gold labels")
    tp = fp = fn = 0
    for p, g in zip(pred_labels, gold_labels):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
    if tp + fp == 0 and tp + fn == 0:
        return 0.0, 0.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision == 0.0 or recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class BucketRow:
    name: str
    n_docs: int
    mean_f1: float | None  # None for an empty bucket


@dataclass
class EvalReport:
    mean_f1: float
    n_docs: int
    buckets: list[BucketRow] = field(default_factory=list)
    token_prf: tuple[float, float, float] | None = None

    def to_table(self) -> str:
        lines = [f"{'bucket':<8} {'docs':>6} {'span_f1':>9}"]
        for b in self.buckets:
            score = "-" if b.mean_f1 is None else f"{b.mean_f1:.4f}"
            lines.append(f"{b.name:<8} {b.n_docs:>6} {score:>9}")
        lines.append(f"{'All':<8} {self.n_docs:>6} {self.mean_f1:>9.4f}")
        if self.token_prf is not None:
            p, r, f = self.token_prf
            lines.append(f"token-level  P {p:.4f}  R {r:.4f}  F1 {f:.4f}")
        return "\n".join(lines) + "\n"

    def to_lines(self) -> str:
        """``metric<TAB>bucket<TAB>value`` records, one per line."""
        out = [f"span_f1\tAll\t{self.mean_f1!r}", f"n_docs\tAll\t{self.n_docs}"]
        for b in self.buckets:
            out.append(f"n_docs\t{b.name}\t{b.n_docs}")
            out.append(f"span_f1\t{b.name}\t{'NA' if b.mean_f1 is None else repr(b.mean_f1)}")
        if self.token_prf is not None:
            for name, v in zip(("token_precision", "token_recall", "token_f1"), self.token_prf):
                out.append(f"{name}\tAll\t{v!r}")
        return "\n".join(out) + "\n"


def breakdown(
    preds: Mapping[int, Iterable[int]],
    golds: Mapping[int, Iterable[int]],
    texts: Mapping[int, str] | None = None,
) -> EvalReport:
    """Mean span F1 overall and split into empty-gold (E.S) / non-empty (N.E.S).

    If ``texts`` are given, token-level P/R/F1 is added by projecting both
    offset sets onto the tokens of each text (a token is positive when any of
    its characters is).
    """
    rows = _aligned(preds, golds)
    if not rows:
        raise ValueError("no documents to score")
    per_doc = [(not list(g), span_f1(p, g)) for _, p, g in rows]
    scores = {key: [f for empty, f in per_doc if empty == key] for key in (True, False)}
    buckets = [
        BucketRow(name, len(scores[key]), sum(scores[key]) / len(scores[key]) if scores[key] else None)
        for name, key in (("E.S", True), ("N.E.S", False))
    ]
    total = [f for _, f in per_doc]
    token_prf = None
    if texts is not None:
        pl, gl = [], []
        for doc_id, p, g in rows:
            p, g = set(p), set(g)
            for tok in tokenize(texts[doc_id]):
                span = range(tok.start, tok.end)
                pl.append(int(any(o in p for o in span)))
                gl.append(int(any(o in g for o in span)))
        token_prf = token_f1(pl, gl)
    return EvalReport(sum(total) / len(total), len(total), buckets, token_prf)
