"""Self-training over disjoint batches of unlabeled documents.

A baseline is trained on the labeled set. Each iteration then pseudo-labels
one unused pool batch with the previous iteration's model and trains a fresh
model on the labeled set plus that batch. Every batch is used exactly once
and gold labels are never replaced.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from toxispan.corpus import Document
from toxispan.model import Labeler, TrainingError, TrainSettings, evaluate_dev, prepare_all
from toxispan.textproc import LabeledSequence, clean, tokenize

logger = logging.getLogger(__name__)


class SslError(ValueError):
    pass


def partition_pool(pool: Sequence[Document], k: int, seed: int = 0) -> list[list[Document]]:
    """Shuffle the pool and cut it into ``k`` contiguous batches.

    Batches hold ``len(pool) // k`` documents each, except the last, which
    also takes the remainder.
    """
    if k < 0:
        raise SslError("iterations must be >= 0")
    if k == 0:
        return []
    if len(pool) < k:
        raise SslError(f"pool of {len(pool)} documents cannot fill {k} batches")
    order = np.random.default_rng(seed).permutation(len(pool))
    size = len(pool) // k
    batches = []
    for i in range(k):
        stop = len(pool) if i == k - 1 else (i + 1) * size
        batches.append([pool[j] for j in order[i * size : stop]])
    return batches


def pseudo_label(batch: Sequence[Document], labeler: Labeler) -> list[LabeledSequence]:
    """Label every document in ``batch`` with the model's predictions (no filtering)."""
    out = []
    for doc in batch:
        tokens = tuple(clean(tokenize(doc.text), labeler.cleaning))
        unlabeled = LabeledSequence(doc.id, tokens, (0,) * len(tokens))
        pred = labeler.predict(unlabeled)
        out.append(LabeledSequence(doc.id, tokens, pred.labels))
    return out


@dataclass(frozen=True)
class SslPlan:
    base_train: Sequence[Document]
    pool: Sequence[Document]
    iterations: int = 4
    seed: int = 0


@dataclass(frozen=True)
class SslIteration:
    iteration: int
    batch_docs: int
    pseudo_toxic_tokens: int
    dev_span_f1: float | None
    dev_token_f1: float
    doc_ids: tuple[int, ...] = field(repr=False, default=())


@dataclass
class SslLog:
    baseline_dev_span_f1: float | None = None
    baseline_dev_token_f1: float | None = None
    rows: list[SslIteration] = field(default_factory=list)

    def to_tsv(self) -> str:
        def fmt(v):
            return "NA" if v is None else repr(v)

        lines = ["iteration\tbatch_docs\tpseudo_toxic_tokens\tdev_token_f1\tdev_span_f1"]
        lines.append(f"0\t0\t0\t{fmt(self.baseline_dev_token_f1)}\t{fmt(self.baseline_dev_span_f1)}")
        for r in self.rows:
            lines.append(
                f"{r.iteration}\t{r.batch_docs}\t{r.pseudo_toxic_tokens}\t{fmt(r.dev_token_f1)}\t{fmt(r.dev_span_f1)}"
            )
        return "\n".join(lines) + "\n"


def run_ssl(
    plan: SslPlan,
    settings: TrainSettings,
    dev_docs: Sequence[Document] = (),
) -> tuple[Labeler, SslLog]:
    """Baseline plus ``plan.iterations`` rounds of pseudo-label and retrain.

    Returns the last iteration's model (the baseline when there are no
    iterations). Each log row holds the dev scores of that iteration's model.
    """
    if any(not d.labeled for d in plan.base_train):
        raise SslError("base_train must be fully labeled")
    batches = partition_pool(plan.pool, plan.iterations, plan.seed)
    base_seqs = prepare_all(plan.base_train, settings.cleaning)
    dev_seqs = prepare_all(dev_docs, settings.cleaning)
    dev_docs = list(dev_docs) or None

    labeler, _ = settings.fit_sequences(base_seqs, dev_seqs, dev_docs)
    log = SslLog()
    if dev_seqs:
        (_, _, log.baseline_dev_token_f1), log.baseline_dev_span_f1 = evaluate_dev(labeler, dev_seqs, dev_docs)

    for i, batch in enumerate(batches, 1):
        pseudo = pseudo_label(batch, labeler)
        try:
            labeler, _ = settings.fit_sequences(base_seqs + pseudo, dev_seqs, dev_docs)
        except TrainingError as exc:
            raise TrainingError(f"self-training iteration {i}: {exc}", exc.epoch, exc.doc_id) from exc
        token, span = (0.0, None)
        if dev_seqs:
            (_, _, token), span = evaluate_dev(labeler, dev_seqs, dev_docs)
        row = SslIteration(
            i, len(batch), sum(sum(s.labels) for s in pseudo), span, token, tuple(d.id for d in batch)
        )
        log.rows.append(row)
        logger.info("ssl iteration %d: %d pseudo-toxic tokens, dev span F1 %s", i, row.pseudo_toxic_tokens, span)
    return labeler, log
