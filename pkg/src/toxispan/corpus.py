"""Corpus ingestion, deterministic splitting, statistics and synthetic data.

Documents follow the public toxic-spans CSV layout: a ``spans``
column holding a bracketed list of toxic character offsets and a ``text``
column holding the post. Offsets are Python string indices (unicode code
points), never bytes.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from toxispan.textproc import LabeledSequence

UNLABELED = "UNLABELED"

_SPANS_RE = re.compile(r"^\[\s*(\d+(?:\s*,\s*\d+)*)?\s*\]$")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid split requests."""


@dataclass(frozen=True)
class Document:
    """A post and its gold toxic offsets.

    ``gold`` is a sorted tuple of unique offsets, or ``None`` for documents
    drawn from an unlabeled pool.
    """

    id: int
    text: str
    gold: tuple[int, ...] | None = ()

    def __post_init__(self):
        if self.gold is None:
            return
        gold = tuple(sorted(set(self.gold)))
        for o in gold:
            if not 0 <= o < len(self.text):
                raise CorpusError(f"document {self.id}: offset {o} outside text of length {len(self.text)}")
        object.__setattr__(self, "gold", gold)

    @property
    def labeled(self) -> bool:
        return self.gold is not None


@dataclass(frozen=True)
class SplitSpec:
    train_frac: Fraction = Fraction(8, 10)
    dev_frac: Fraction = Fraction(1, 10)
    test_frac: Fraction = Fraction(1, 10)
    seed: int = 0

    def __post_init__(self):
        fracs = [Fraction(f) for f in (self.train_frac, self.dev_frac, self.test_frac)]
        if any(f < 0 for f in fracs):
            raise CorpusError("split fractions must be nonnegative")
        if sum(fracs) != 1:
            raise CorpusError(f"split fractions must sum to 1, got {sum(fracs)}")
        object.__setattr__(self, "train_frac", fracs[0])
        object.__setattr__(self, "dev_frac", fracs[1])
        object.__setattr__(self, "test_frac", fracs[2])

    @classmethod
    def parse(cls, ratio: str, seed: int = 0) -> "SplitSpec":
        """Build from a ``"80:10:10"`` style ratio string."""
        parts = ratio.split(":")
        if len(parts) != 3:
            raise CorpusError(f"expected three ratio parts A:B:C, got {ratio!r}")
        try:
            nums = [Fraction(p.strip()) for p in parts]
        except ValueError as exc:
            raise CorpusError(f"bad ratio {ratio!r}") from exc
        total = sum(nums)
        if total <= 0:
            raise CorpusError(f"bad ratio {ratio!r}")
        return cls(*(n / total for n in nums), seed=seed)


@dataclass(frozen=True)
class CorpusStats:
    n_documents: int
    n_tokens: int
    n_toxic_tokens: int
    n_empty_gold: int
    # None when there are no toxic tokens
    imbalance_ratio: float | None = field(default=None)


def parse_spans(field_value: str) -> tuple[int, ...]:
    m = _SPANS_RE.match(field_value.strip())
    if m is None:
        raise ValueError(f"malformed span list {field_value!r}")
    if m.group(1) is None:
        return ()
    return tuple(int(x) for x in m.group(1).split(","))


def format_spans(offsets: Iterable[int]) -> str:
    return "[" + ", ".join(str(o) for o in offsets) + "]"


def load_csv(path: str | Path, allow_unlabeled: bool = False) -> list[Document]:
    """Read a ``spans``/``text`` CSV into documents (``id`` = row index).

    With ``allow_unlabeled`` a spans field of ``UNLABELED`` yields a document
    with ``gold=None``; this is the pool-file format.
    """
    docs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"spans", "text"} <= set(reader.fieldnames):
            raise CorpusError(f"{path}: header must contain 'spans' and 'text' columns")
        for row_idx, row in enumerate(reader):
            raw, text = row["spans"], row["text"]
            if raw is None or text is None:
                raise CorpusError(f"{path}: row {row_idx}: missing field")
            if allow_unlabeled and raw.strip() == UNLABELED:
                docs.append(Document(row_idx, text, None))
                continue
            try:
                gold = parse_spans(raw)
            except ValueError as exc:
                raise CorpusError(f"{path}: row {row_idx}: {exc}") from None
            for o in gold:
                if o >= len(text):
                    raise CorpusError(
                        f"{path}: row {row_idx}: offset {o} out of range for text of length {len(text)}"
                    )
            docs.append(Document(row_idx, text, gold))
    return docs


def write_csv(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["spans", "text"])
        for doc in docs:
            writer.writerow([UNLABELED if doc.gold is None else format_spans(doc.gold), doc.text])


def reindex(docs: Iterable[Document]) -> list[Document]:
    """Renumber ids 0..N-1 in order, as a CSV round trip would."""
    return [Document(i, d.text, d.gold) for i, d in enumerate(docs)]


def _round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)) // 1)


def split(docs: Sequence[Document], spec: SplitSpec) -> tuple[list[Document], list[Document], list[Document]]:
    """Shuffle deterministically and cut into train/dev/test.

    Dev and test sizes are ``frac * N`` rounded half-up; train takes the
    remainder. For N=7939 at 80:10:10 this gives 6351/794/794.
    """
    if not docs:
        raise CorpusError("cannot split an empty corpus")
    n = len(docs)
    n_dev = _round_half_up(spec.dev_frac * n)
    n_test = min(_round_half_up(spec.test_frac * n), n - n_dev)
    if spec.train_frac == 0:
        # all rounding slack goes to dev/test rather than an unwanted train set
        n_test = n - n_dev
    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [docs[i] for i in order]
    dev = shuffled[:n_dev]
    test = shuffled[n_dev : n_dev + n_test]
    train = shuffled[n_dev + n_test :]
    return train, dev, test


def stats(docs: Sequence[Document], tokenized: Sequence["LabeledSequence"]) -> CorpusStats:
    """Token counts over active tokens and the non-toxic:toxic ratio."""
    if len(docs) != len(tokenized):
        raise CorpusError(f"{len(docs)} documents but {len(tokenized)} token sequences")
    n_tokens = n_toxic = 0
    for seq in tokenized:
        for tok, lab in zip(seq.tokens, seq.labels):
            if tok.active:
                n_tokens += 1
                n_toxic += lab
    n_empty = sum(1 for d in docs if d.gold is not None and not d.gold)
    ratio = (n_tokens - n_toxic) / n_toxic if n_toxic else None
    return CorpusStats(len(docs), n_tokens, n_toxic, n_empty, ratio)


# --- synthetic corpora -------------------------------------------------------

DEFAULT_LEXICON = (
    "idiot", "moron", "stupid", "dumb", "pathetic", "loser", "fool", "jerk",
    "scum", "trash", "clown", "liar", "hypocrite", "coward", "pig", "imbecile",
    "disgusting", "ignorant", "lame", "crap", "garbage", "buffoon", "twit",
    "witless", "dimwit", "nitwit", "creep", "bigot", "idiotic", "worthless",
)

DEFAULT_FILLERS = (
    "the", "a", "this", "that", "people", "government", "city", "plan", "tax",
    "money", "vote", "election", "council", "mayor", "state", "policy", "law",
    "school", "road", "budget", "report", "article", "comment", "story", "news",
    "idea", "point", "issue", "time", "year", "week", "day", "house", "job",
    "work", "family", "world", "country", "party", "leader", "member", "voter",
    "really", "just", "never", "always", "again", "still", "very", "quite",
    "think", "know", "say", "said", "want", "need", "make", "made", "see",
    "read", "pay", "paid", "agree", "believe", "support", "oppose", "vote",
    "good", "bad", "new", "old", "big", "small", "local", "public", "real",
    "true", "wrong", "right", "clear", "whole", "other", "same", "next",
    "and", "but", "or", "so", "because", "if", "when", "while", "about",
    "with", "for", "from", "into", "over", "after", "before", "under",
    "don't", "can't", "it's", "isn't", "doesn't", "won't", "i'm", "they're",
    "2020", "100", "3rd", "50%", "$20",
)

DEFAULT_TEMPLATES = (
    "you are a {T} and {F} {F} {F} {F} {F} {F} {F} {F}.",
    "{F} {F} {F} {F} {F} {F} {F} {F}, what a {T}!",
    "{F} {F} {F} {F} {F} {F} {F} {F} {F}. only a {T} {T} would {F} {F} that.",
    "{F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} is {T}.",
    "the {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} is run by {T} {F} (and {T} {F}).",
    "{F} {F} {F}? {F} {F} {F} {F} {F} {F} {F} {F} {F}. {T}.",
    "\"{F} {F} {F}\" {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {T} {F} {F}...",
    "{F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F}; {T} {F} {F} {F} {F}!",
    "i have no {F} {F} {F} {F} {F} {F} {F} {F} {F} (by a {T}, for a {T})",
    "{F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F} {F}: {T} {T}.",
)

_SLOT_RE = re.compile(r"(\{T\}|\{F\})")


def _variant(word: str, rng: np.random.Generator) -> str:
    r = rng.integers(3)
    if r == 0:
        return word.capitalize()
    if r == 1:
        return word.upper()
    return word + "s"


def generate_synthetic(
    n_docs: int,
    seed: int = 0,
    lexicon: Sequence[str] = DEFAULT_LEXICON,
    templates: Sequence[str] = DEFAULT_TEMPLATES,
    fillers: Sequence[str] = DEFAULT_FILLERS,
    empty_frac: float = 0.05,
    toxic_slot_prob: float = 0.8,
    variant_prob: float = 0.1,
) -> list[Document]:
    """Instantiate templates into documents whose gold is known by construction.

    Templates contain ``{T}`` slots (a lexicon word, toxic) and ``{F}`` slots
    (a filler word). Roughly ``empty_frac`` of documents take fillers in every
    slot and have empty gold. Otherwise each ``{T}`` slot is toxic with
    probability ``toxic_slot_prob`` and at least one always is. Raising
    ``toxic_slot_prob`` gives denser pools, standing in for selecting
    high-toxicity comments.
    """
    if not lexicon or not templates:
        raise CorpusError("lexicon and templates must be nonempty")
    if not 0.0 <= empty_frac <= 1.0:
        raise CorpusError("empty_frac must be in [0, 1]")
    rng = np.random.default_rng(seed)
    parsed = [_SLOT_RE.split(t) for t in templates]
    docs = []
    for i in range(n_docs):
        pieces = parsed[rng.integers(len(parsed))]
        empty = rng.random() < empty_frac
        n_slots = sum(1 for p in pieces if p == "{T}")
        if empty or n_slots == 0:
            toxic_slots = np.zeros(n_slots, dtype=bool)
        else:
            toxic_slots = rng.random(n_slots) < toxic_slot_prob
            if not toxic_slots.any():
                toxic_slots[rng.integers(n_slots)] = True
        out: list[str] = []
        gold: list[int] = []
        pos = 0
        slot = 0
        for piece in pieces:
            if piece == "{T}" and toxic_slots[slot]:
                word = lexicon[rng.integers(len(lexicon))]
                if rng.random() < variant_prob:
                    word = _variant(word, rng)
                gold.extend(range(pos, pos + len(word)))
            elif piece in ("{T}", "{F}"):
                word = fillers[rng.integers(len(fillers))]
            else:
                word = piece
            if piece == "{T}":
                slot += 1
            out.append(word)
            pos += len(word)
        docs.append(Document(i, "".join(out), tuple(gold)))
    return docs


def as_unlabeled(docs: Iterable[Document]) -> list[Document]:
    """Drop gold annotations, e.g. to build a self-training pool."""
    return [Document(d.id, d.text, None) for d in docs]
