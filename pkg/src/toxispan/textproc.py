"""Offset-preserving tokenization, token cleaning and gold projection.

Tokens always carry their half-open span into the *original* text. Cleaning
rewrites a token's text (and may deactivate it) but never moves its span, so
predictions can be mapped back to character offsets after any cleaning.

The tokenizer is a simplification of Treebank rules: split on whitespace,
then peel leading and trailing punctuation/symbol characters off each run as
single-character tokens. Word-internal apostrophes and hyphens stay put, so
``don't`` and ``f***ing`` remain one token each.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from toxispan.corpus import Document

_RUN_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class TokenSpan:
    text: str
    start: int
    end: int
    active: bool = True


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def tokenize(text: str) -> list[TokenSpan]:
    """Split ``text`` into tokens on whitespace and edge punctuation.

    >>> [(t.text, t.start, t.end) for t in tokenize("an idiot)")]
    [('an', 0, 2), ('idiot', 3, 8), (')', 8, 9)]
    """
    tokens = []
    for m in _RUN_RE.finditer(text):
        s, e = m.start(), m.end()
        lead = []
        while s < e and _is_punct(text[s]):
            lead.append(TokenSpan(text[s], s, s + 1))
            s += 1
        trail = []
        while e > s and _is_punct(text[e - 1]):
            trail.append(TokenSpan(text[e - 1], e - 1, e))
            e -= 1
        tokens.extend(lead)
        if s < e:
            tokens.append(TokenSpan(text[s:e], s, e))
        tokens.extend(reversed(trail))
    return tokens


def load_contraction_table(path: str | Path | None = None) -> dict[str, str]:
    """Read a ``surface<TAB>expansion`` table; the bundled one by default."""
    if path is None:
        raw = resources.files("toxispan.resources").joinpath("contractions.tsv").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    table = {}
    for lineno, line in enumerate(raw.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].strip():
            raise ValueError(f"contraction table line {lineno}: expected 'surface<TAB>expansion'")
        surface, expansion = parts[0].strip(), parts[1].strip()
        if surface != surface.lower():
            raise ValueError(f"contraction table line {lineno}: surface {surface!r} is not lowercase")
        table[surface] = expansion
    return table


@lru_cache(maxsize=1)
def default_contraction_table() -> Mapping[str, str]:
    return MappingProxyType(load_contraction_table())


@dataclass(frozen=True)
class CleaningConfig:
    expand_contractions: bool = True
    remove_digits: bool = True
    remove_fullstops: bool = True
    contraction_table: Mapping[str, str] = field(default_factory=default_contraction_table, repr=False)

    def __post_init__(self):
        for k, v in self.contraction_table.items():
            if k != k.lower() or not v:
                raise ValueError(f"invalid contraction entry {k!r} -> {v!r}")


def clean_text(text: str, cfg: CleaningConfig) -> str:
    if cfg.expand_contractions:
        # curly apostrophes are common in scraped comments
        key = text.lower().replace("’", "'")
        text = cfg.contraction_table.get(key, text)
    if cfg.remove_digits:
        text = "".join(ch for ch in text if not ch.isdigit())
    if cfg.remove_fullstops and text == ".":
        text = ""
    return text


def clean(tokens: Iterable[TokenSpan], cfg: CleaningConfig) -> list[TokenSpan]:
    """Apply the cleaning operations to each token's text.

    Tokens left with empty text are kept but marked inactive: they are skipped
    by the model and can never be labeled toxic.
    """
    out = []
    for tok in tokens:
        text = clean_text(tok.text, cfg)
        out.append(replace(tok, text=text, active=tok.active and bool(text)))
    return out


@dataclass(frozen=True)
class LabeledSequence:
    doc_id: int
    tokens: tuple[TokenSpan, ...]
    labels: tuple[int, ...]
    probs: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.labels) != len(self.tokens):
            raise ValueError(f"sequence {self.doc_id}: {len(self.labels)} labels for {len(self.tokens)} tokens")
        if self.probs is not None:
            if len(self.probs) != len(self.tokens):
                raise ValueError(f"sequence {self.doc_id}: probs misaligned with tokens")
            if any(not 0.0 <= p <= 1.0 for p in self.probs):
                raise ValueError(f"sequence {self.doc_id}: probability outside [0, 1]")


def project_gold(doc: Document, tokens: Sequence[TokenSpan]) -> LabeledSequence:
    """Label a token toxic iff it is active and any of its characters is gold."""
    gold = set(doc.gold or ())
    labels = tuple(
        int(tok.active and any(o in gold for o in range(tok.start, tok.end))) for tok in tokens
    )
    return LabeledSequence(doc.id, tuple(tokens), labels)


def prepare(doc: Document, cfg: CleaningConfig) -> LabeledSequence:
    """Tokenize, clean and project gold for one document."""
    return project_gold(doc, clean(tokenize(doc.text), cfg))
