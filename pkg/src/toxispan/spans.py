"""Token labels to character offsets, prediction-time full stop, ensembling.

Prediction files use one line per document: ``<doc_id>\\t[o1, o2, ...]``,
ids ascending, offsets ascending, ``[]`` for no toxic characters.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from toxispan.corpus import Document, format_spans, parse_spans
from toxispan.textproc import LabeledSequence, clean, tokenize

if TYPE_CHECKING:
    from toxispan.model import Labeler

FULLSTOP_SUFFIX = " ."


class PredictionFileError(ValueError):
    pass


@dataclass(frozen=True)
class SpanPrediction:
    doc_id: int
    offsets: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(sorted(set(self.offsets))))


def to_offsets(seq: LabeledSequence, original_text: str) -> SpanPrediction:
    """Characters of toxic tokens, plus the gap between consecutive toxic tokens.

    Consecutive means adjacent in the token list: a non-toxic (or inactive)
    token in between blocks gap filling.
    """
    offsets: set[int] = set()
    prev = None
    for tok, lab in zip(seq.tokens, seq.labels):
        if lab:
            offsets.update(range(tok.start, tok.end))
            if prev is not None:
                offsets.update(range(prev.end, tok.start))
            prev = tok
        else:
            prev = None
    n = len(original_text)
    return SpanPrediction(seq.doc_id, tuple(o for o in offsets if o < n))


def predict_document(doc: Document, labeler: "Labeler", append_fullstop: bool = False) -> SpanPrediction:
    """Run tokenize -> clean -> label -> offsets on a raw document.

    With ``append_fullstop`` the text is extended by ``" ."`` first. The
    appended token always stays active (cleaning would otherwise drop it) so
    it shapes its neighbours' context, but its own label is dropped before
    offsets are computed.
    """
    text = doc.text + FULLSTOP_SUFFIX if append_fullstop else doc.text
    tokens = clean(tokenize(text), labeler.cleaning)
    if append_fullstop:
        tokens[-1] = replace(tokens[-1], text=".", active=True)
    seq = labeler.predict(LabeledSequence(doc.id, tuple(tokens), (0,) * len(tokens)))
    if append_fullstop and tokens:
        # the appended token never emits offsets, not even gap offsets
        # bridging trailing whitespace to it
        seq = replace(seq, labels=seq.labels[:-1] + (0,))
    pred = to_offsets(seq, text)
    return SpanPrediction(doc.id, tuple(o for o in pred.offsets if o < len(doc.text)))


def predict_with_fullstop(doc: Document, labeler: "Labeler") -> SpanPrediction:
    return predict_document(doc, labeler, append_fullstop=True)


def predict_corpus(docs: Iterable[Document], labeler: "Labeler", append_fullstop: bool = False) -> list[SpanPrediction]:
    return [predict_document(d, labeler, append_fullstop) for d in docs]


def ensemble(systems: Sequence[Sequence[SpanPrediction]]) -> list[SpanPrediction]:
    """Character-level strict-majority vote across systems.

    An offset survives when more than half of the systems predict it, so
    with an even number of systems a tie is dropped.
    """
    if not systems:
        raise ValueError("ensemble needs at least one system")
    by_system = [{p.doc_id: p for p in preds} for preds in systems]
    all_ids = set().union(*(s.keys() for s in by_system))
    for k, s in enumerate(by_system):
        missing = sorted(all_ids - s.keys())
        if missing:
            raise ValueError(f"system {k} is missing doc ids {missing}")
    n = len(systems)
    out = []
    for doc_id in sorted(all_ids):
        votes = Counter(o for s in by_system for o in s[doc_id].offsets)
        out.append(SpanPrediction(doc_id, tuple(o for o, c in votes.items() if 2 * c > n)))
    return out


def write_predictions(preds: Iterable[SpanPrediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in sorted(preds, key=lambda p: p.doc_id):
            fh.write(f"{p.doc_id}\t{format_spans(p.offsets)}\n")


def read_predictions(path: str | Path) -> list[SpanPrediction]:
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError("expected '<doc_id>\\t[offsets]'")
                preds.append(SpanPrediction(int(parts[0]), parse_spans(parts[1])))
            except ValueError as exc:
                raise PredictionFileError(f"{path}: line {lineno}: {exc}") from None
    ids = [p.doc_id for p in preds]
    if len(set(ids)) != len(ids):
        raise PredictionFileError(f"{path}: duplicate doc ids")
    return preds
