"""Preprocessing ablations: retrain with one cleaning step switched off.

Variant names: ``TD`` keeps every cleaning step, ``WNUM`` keeps digits,
``WFS`` keeps full stops and ``WCON`` leaves contractions unexpanded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from toxispan.corpus import Document
from toxispan.model import TrainSettings, evaluate_dev, prepare_all
from toxispan.textproc import CleaningConfig

VARIANTS = ("TD", "WNUM", "WFS", "WCON")


def variant_cleaning(variant: str, base: CleaningConfig | None = None) -> CleaningConfig:
    base = replace(base or CleaningConfig(), expand_contractions=True, remove_digits=True, remove_fullstops=True)
    if variant == "TD":
        return base
    if variant == "WNUM":
        return replace(base, remove_digits=False)
    if variant == "WFS":
        return replace(base, remove_fullstops=False)
    if variant == "WCON":
        return replace(base, expand_contractions=False)
    raise ValueError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class AblationRow:
    variant: str
    dev_span_f1: float
    dev_token_f1: float


def ablate(
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    variants: Iterable[str] = VARIANTS,
    settings: TrainSettings = TrainSettings(),
) -> list[AblationRow]:
    """Train one model per variant, in the order given, and score it on dev."""
    rows = []
    for v in variants:
        cfg = replace(settings, cleaning=variant_cleaning(v, settings.cleaning))
        labeler, _ = cfg.fit(train_docs, dev_docs)
        (_, _, token), span = evaluate_dev(labeler, prepare_all(dev_docs, cfg.cleaning), dev_docs)
        rows.append(AblationRow(v, span, token))
    return rows


def format_table(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'variant':<8} {'dev_span_f1':>12} {'dev_token_f1':>13}"]
    lines += [f"{r.variant:<8} {r.dev_span_f1:>12.4f} {r.dev_token_f1:>13.4f}" for r in rows]
    return "\n".join(lines) + "\n"
