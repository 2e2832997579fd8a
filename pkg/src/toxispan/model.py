"""A small windowed MLP token labeler trained from scratch with numpy.

Each active token is embedded as the mean of hashed feature embeddings (the
lowercased word plus character n-grams of ``^token$``). The embeddings of a
``2w+1`` token window are concatenated, passed through one ReLU layer and a
logistic output unit giving the probability that the token is toxic.

Forward and backward passes are written out by hand so the gradients of
every loss in :mod:`toxispan.loss` can be checked against finite
differences.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from toxispan.corpus import Document
from toxispan.evaluation import corpus_span_f1, token_f1
from toxispan.loss import LossSelector
from toxispan.spans import to_offsets
from toxispan.textproc import CleaningConfig, LabeledSequence, prepare

logger = logging.getLogger(__name__)

PARAM_NAMES = ("E", "W1", "b1", "w2", "b2")
INIT_SCALE = 0.05
MODEL_MAGIC = b"TOXISPAN-MODEL 1\n"


class ConfigurationError(ValueError):
    """Parameters do not match the labeler configuration."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, msg: str, epoch: int | None = None, doc_id: int | None = None):
        super().__init__(msg)
        self.epoch = epoch
        self.doc_id = doc_id


@dataclass(frozen=True)
class LabelerConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    window_radius: int = 2
    hash_buckets: int = 65536
    char_ngram_n: int = 3
    seed: int = 0
    toxic_threshold: float = 0.5

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.hash_buckets, self.char_ngram_n) < 1:
            raise ConfigurationError("embed_dim, hidden_dim, hash_buckets and char_ngram_n must be >= 1")
        if self.window_radius < 0:
            raise ConfigurationError("window_radius must be >= 0")
        if not 0.0 < self.toxic_threshold < 1.0:
            raise ConfigurationError("toxic_threshold must lie strictly between 0 and 1")

    @property
    def input_dim(self) -> int:
        return (2 * self.window_radius + 1) * self.embed_dim


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam with decoupled weight decay.

    Parameters named in ``decay_exempt`` (the biases) are never decayed.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    decay_exempt: frozenset[str] = frozenset({"b1", "b2"})

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigurationError("beta1 and beta2 must lie strictly between 0 and 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not self.weight_decay >= 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")

    def is_exempt(self, name: str) -> bool:
        return name in self.decay_exempt


@dataclass
class LabelerParams:
    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray  # 0-d

    @classmethod
    def zeros(cls, cfg: LabelerConfig) -> "LabelerParams":
        return cls(
            E=np.zeros((cfg.hash_buckets, cfg.embed_dim)),
            W1=np.zeros((cfg.hidden_dim, cfg.input_dim)),
            b1=np.zeros(cfg.hidden_dim),
            w2=np.zeros(cfg.hidden_dim),
            b2=np.zeros(()),
        )

    @classmethod
    def init(cls, cfg: LabelerConfig) -> "LabelerParams":
        """Weights uniform in [-0.05, 0.05] from ``cfg.seed``; biases zero."""
        rng = np.random.default_rng(cfg.seed)
        p = cls.zeros(cfg)
        p.E[...] = rng.uniform(-INIT_SCALE, INIT_SCALE, p.E.shape)
        p.W1[...] = rng.uniform(-INIT_SCALE, INIT_SCALE, p.W1.shape)
        p.w2[...] = rng.uniform(-INIT_SCALE, INIT_SCALE, p.w2.shape)
        return p

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def copy(self) -> "LabelerParams":
        return LabelerParams(*(a.copy() for _, a in self.items()))

    def check(self, cfg: LabelerConfig) -> None:
        expected = LabelerParams.zeros_shapes(cfg)
        for name, arr in self.items():
            if arr.shape != expected[name]:
                raise ConfigurationError(f"parameter {name} has shape {arr.shape}, config expects {expected[name]}")

    @staticmethod
    def zeros_shapes(cfg: LabelerConfig) -> dict[str, tuple[int, ...]]:
        return {
            "E": (cfg.hash_buckets, cfg.embed_dim),
            "W1": (cfg.hidden_dim, cfg.input_dim),
            "b1": (cfg.hidden_dim,),
            "w2": (cfg.hidden_dim,),
            "b2": (),
        }

    def equal(self, other: "LabelerParams") -> bool:
        return all(np.array_equal(a, b) for (_, a), (_, b) in zip(self.items(), other.items()))


# --- features ------------------------------------------------------------------


def _hash64(s: str) -> int:
    # blake2b truncated to 8 bytes: stable across runs and platforms, unlike hash()
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


@lru_cache(maxsize=200_000)
def _feature_ids(text: str, n: int, buckets: int) -> tuple[int, ...]:
    ids = {_hash64("w\x1f" + text.lower()) % buckets}
    padded = "^" + text + "$"
    for i in range(len(padded) - n + 1):
        ids.add(_hash64("c\x1f" + padded[i : i + n]) % buckets)
    return tuple(sorted(ids))


def featurize(token_text: str, cfg: LabelerConfig) -> frozenset[int]:
    """Hashed feature ids of a token: its lowercased form plus char n-grams.

    Ids are ``blake2b-64(tag + string) mod hash_buckets`` where the tag
    separates whole-word features (``"w\\x1f"``) from n-gram features
    (``"c\\x1f"``). N-grams are taken over ``"^" + text + "$"`` with case kept.
    """
    return frozenset(_feature_ids(token_text, cfg.char_ngram_n, cfg.hash_buckets))


@dataclass
class _Encoded:
    """Feature layout of one sequence, computed once and reused."""

    doc_id: int
    active: np.ndarray  # bool (T,)
    active_idx: np.ndarray  # int (A,)
    flat_ids: np.ndarray  # int (K,), features of active tokens concatenated
    starts: np.ndarray  # int (A,), offsets into flat_ids
    counts: np.ndarray  # float (A,)
    labels: np.ndarray  # float (T,)


def _encode(seq: LabeledSequence, cfg: LabelerConfig) -> _Encoded:
    active = np.array([t.active for t in seq.tokens], dtype=bool)
    active_idx = np.flatnonzero(active)
    id_lists = [_feature_ids(seq.tokens[i].text, cfg.char_ngram_n, cfg.hash_buckets) for i in active_idx]
    counts = np.array([len(ids) for ids in id_lists], dtype=np.int64)
    starts = np.zeros(len(id_lists), dtype=np.int64)
    if len(counts) > 1:
        starts[1:] = np.cumsum(counts)[:-1]
    flat = np.fromiter((i for ids in id_lists for i in ids), dtype=np.int64, count=int(counts.sum()))
    return _Encoded(
        seq.doc_id, active, active_idx, flat, starts, counts.astype(np.float64),
        np.asarray(seq.labels, dtype=np.float64),
    )


# --- forward / backward ----------------------------------------------------------


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _forward(enc: _Encoded, params: LabelerParams, cfg: LabelerConfig):
    T = len(enc.active)
    w, d = cfg.window_radius, cfg.embed_dim
    epad = np.zeros((T + 2 * w, d))
    if len(enc.active_idx):
        sums = np.add.reduceat(params.E[enc.flat_ids], enc.starts, axis=0)
        epad[enc.active_idx + w] = sums / enc.counts[:, None]
    X = np.concatenate([epad[k : k + T] for k in range(2 * w + 1)], axis=1)
    # overflow only happens once training has diverged, which callers detect
    with np.errstate(over="ignore", invalid="ignore"):
        pre = X @ params.W1.T + params.b1
        h = np.maximum(pre, 0.0)
        p = _sigmoid(h @ params.w2 + params.b2)
    p[~enc.active] = 0.0
    return p, (X, pre, h)


def forward(seq: LabeledSequence, params: LabelerParams, cfg: LabelerConfig) -> np.ndarray:
    """Toxic probability per token; exactly 0 for inactive tokens."""
    params.check(cfg)
    return _forward(_encode(seq, cfg), params, cfg)[0]


def _sequence_loss(p: np.ndarray, enc: _Encoded, loss: LossSelector) -> float:
    if not len(enc.active_idx):
        return 0.0
    return float(np.mean(loss.value(p[enc.active_idx], enc.labels[enc.active_idx])))


def _backward(enc: _Encoded, params: LabelerParams, cfg: LabelerConfig, loss: LossSelector):
    """Mean active-token loss and its gradients; E's gradient stays sparse.

    Returns ``(loss, grads)`` where ``grads["E"]`` is ``(row_ids, rows)`` to
    be scatter-added (ids may repeat).
    """
    T = len(enc.active)
    w, d = cfg.window_radius, cfg.embed_dim
    p, (X, pre, h) = _forward(enc, params, cfg)
    n_act = len(enc.active_idx)
    if n_act == 0:
        grads = {name: np.zeros_like(a) for name, a in params.items() if name != "E"}
        grads["E"] = (np.zeros(0, dtype=np.int64), np.zeros((0, d)))
        return 0.0, grads
    pa = p[enc.active_idx]
    ya = enc.labels[enc.active_idx]
    if not np.all(np.isfinite(pa)):
        # diverged parameters: report a non-finite loss and let the caller abort
        grads = {name: np.zeros_like(a) for name, a in params.items() if name != "E"}
        grads["E"] = (np.zeros(0, dtype=np.int64), np.zeros((0, d)))
        return float("nan"), grads
    dz = np.zeros(T)
    dz[enc.active_idx] = loss.grad(pa, ya) * pa * (1.0 - pa) / n_act
    dpre = np.outer(dz, params.w2) * (pre > 0.0)
    dX = dpre @ params.W1
    de_pad = np.zeros((T + 2 * w, d))
    for k in range(2 * w + 1):
        de_pad[k : k + T] += dX[:, k * d : (k + 1) * d]
    de = de_pad[enc.active_idx + w] / enc.counts[:, None]
    grads = {
        "E": (enc.flat_ids, np.repeat(de, enc.counts.astype(np.int64), axis=0)),
        "W1": dpre.T @ X,
        "b1": dpre.sum(axis=0),
        "w2": h.T @ dz,
        "b2": np.asarray(dz.sum()),
    }
    return _sequence_loss(p, enc, loss), grads


def backward(
    seq: LabeledSequence, params: LabelerParams, cfg: LabelerConfig, loss_cfg: LossSelector
) -> dict[str, np.ndarray]:
    """Dense gradients of the sequence's mean active-token loss."""
    params.check(cfg)
    _, grads = _backward(_encode(seq, cfg), params, cfg, loss_cfg)
    ids, rows = grads["E"]
    dense = np.zeros_like(params.E)
    np.add.at(dense, ids, rows)
    grads["E"] = dense
    return grads


def sequence_loss(seq: LabeledSequence, params: LabelerParams, cfg: LabelerConfig, loss_cfg: LossSelector) -> float:
    enc = _encode(seq, cfg)
    p, _ = _forward(enc, params, cfg)
    return _sequence_loss(p, enc, loss_cfg)


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: LabelerParams) -> "AdamState":
        return cls(
            0,
            {n: np.zeros_like(a) for n, a in params.items()},
            {n: np.zeros_like(a) for n, a in params.items()},
        )


def step(
    params: LabelerParams, grads: dict[str, np.ndarray], state: AdamState, opt: OptimizerConfig
) -> tuple[LabelerParams, AdamState]:
    """One Adam update with decoupled weight decay, applied in place.

    ``param -= lr * wd * param + lr * m_hat / (sqrt(v_hat) + eps)``, with the
    decay term skipped for exempt parameters.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient {name} has shape {g.shape}, parameter has {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + opt.epsilon)
        if opt.weight_decay and not opt.is_exempt(name):
            p -= (opt.learning_rate * opt.weight_decay) * p
        p -= opt.learning_rate * update
    return params, state


# --- labeler ------------------------------------------------------------------


@dataclass
class Labeler:
    """Trained parameters bundled with everything needed to predict."""

    cfg: LabelerConfig
    params: LabelerParams
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)

    def probs(self, seq: LabeledSequence) -> np.ndarray:
        return forward(seq, self.params, self.cfg)

    def predict(self, seq: LabeledSequence) -> LabeledSequence:
        return predict(seq, self.params, self.cfg)

    def save(self, path: str | Path) -> None:
        save_model(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "Labeler":
        return load_model(path)


def predict(seq: LabeledSequence, params: LabelerParams, cfg: LabelerConfig) -> LabeledSequence:
    """Label tokens with ``p >= toxic_threshold``; inactive tokens stay 0."""
    p = forward(seq, params, cfg)
    labels = tuple(int(tok.active and pi >= cfg.toxic_threshold) for tok, pi in zip(seq.tokens, p))
    return LabeledSequence(seq.doc_id, seq.tokens, labels, tuple(float(x) for x in p))


def save_model(labeler: Labeler, path: str | Path) -> None:
    """Write config, cleaning settings and raw float64 arrays to one file.

    Layout: a magic line, one line of JSON (sorted keys) describing configs and
    array shapes, then the little-endian array bytes in header order. Output
    bytes depend only on the model, so identical models give identical files.
    """
    arrays = labeler.params.items()
    header = {
        "labeler": asdict(labeler.cfg),
        "cleaning": {
            "expand_contractions": labeler.cleaning.expand_contractions,
            "remove_digits": labeler.cleaning.remove_digits,
            "remove_fullstops": labeler.cleaning.remove_fullstops,
            "contraction_table": dict(sorted(labeler.cleaning.contraction_table.items())),
        },
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": "<f8"} for n, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=True).encode("ascii") + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path: str | Path) -> Labeler:
    with open(path, "rb") as fh:
        if fh.readline() != MODEL_MAGIC:
            raise ConfigurationError(f"{path}: not a toxispan model file")
        header = json.loads(fh.readline().decode("ascii"))
        cfg = LabelerConfig(**header["labeler"])
        cleaning = CleaningConfig(**header["cleaning"])
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise ConfigurationError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise ConfigurationError(f"{path}: trailing bytes after arrays")
    params = LabelerParams(**arrays)
    params.check(cfg)
    return Labeler(cfg, params, cleaning)


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    dev_token_precision: float | None
    dev_token_recall: float | None
    dev_token_f1: float | None
    dev_span_f1: float | None = None


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best(self) -> EpochRecord | None:
        for r in self.records:
            if r.epoch == self.best_epoch:
                return r
        return None

    def to_tsv(self) -> str:
        cols = ["epoch", "train_loss", "dev_token_precision", "dev_token_recall", "dev_token_f1", "dev_span_f1"]
        lines = ["\t".join(cols)]
        for r in self.records:
            vals = [getattr(r, c) for c in cols]
            lines.append("\t".join("NA" if v is None else (str(v) if isinstance(v, int) else repr(float(v))) for v in vals))
        lines.append(f"best_epoch\t{self.best_epoch}")
        return "\n".join(lines) + "\n"


def evaluate_dev(
    labeler: Labeler, dev_seqs: Sequence[LabeledSequence], dev_docs: Sequence[Document] | None = None
) -> tuple[tuple[float, float, float], float | None]:
    """Token-level P/R/F1 on ``dev_seqs`` and, given documents, mean span F1."""
    preds = [labeler.predict(s) for s in dev_seqs]
    prf = token_f1(
        [lab for s in preds for lab in s.labels],
        [lab for s in dev_seqs for lab in s.labels],
    )
    span = None
    if dev_docs is not None:
        span = corpus_span_f1(
            {s.doc_id: to_offsets(s, d.text).offsets for s, d in zip(preds, dev_docs)},
            {d.id: d.gold for d in dev_docs},
        )
    return prf, span


def train(
    train_seqs: Sequence[LabeledSequence],
    dev_seqs: Sequence[LabeledSequence],
    cfg: LabelerConfig = LabelerConfig(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    loss_cfg: LossSelector = LossSelector(),
    epochs: int = 20,
    seed: int = 0,
    batch_size: int = 1,
    dev_docs: Sequence[Document] | None = None,
    cleaning: CleaningConfig | None = None,
) -> tuple[Labeler, TrainingLog]:
    """Train a fresh labeler and keep the epoch with the best dev token F1.

    Sequences are visited in a per-epoch permutation drawn from ``seed``;
    gradients are averaged over ``batch_size`` sequences per update (the
    default of 1 updates after every sequence). When ``dev_docs`` (aligned
    with ``dev_seqs``) are given, the log also records dev span F1. Ties in
    dev token F1 keep the earlier epoch; without dev sequences the final
    epoch is returned.

    Only embedding rows reachable from training features can receive a
    gradient. Adam runs on those rows; every other row has zero moments, so
    its dense AdamW update is pure decay and is applied in closed form as
    ``(1 - lr * wd) ** t`` whenever the full table is needed.
    """
    if not train_seqs:
        raise ValueError("training set is empty")
    if dev_docs is not None and len(dev_docs) != len(dev_seqs):
        raise ValueError("dev_docs must align with dev_seqs")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cleaning = cleaning or CleaningConfig()
    init = LabelerParams.init(cfg)
    log = TrainingLog()
    if epochs <= 0:
        return Labeler(cfg, init, cleaning), log

    encoded = [_encode(s, cfg) for s in train_seqs]
    live = np.unique(np.concatenate([e.flat_ids for e in encoded]))
    for e in encoded:
        e.flat_ids = np.searchsorted(live, e.flat_ids)
    local = init.copy()
    local.E = init.E[live]
    decay = 1.0 if opt_cfg.is_exempt("E") else 1.0 - opt_cfg.learning_rate * opt_cfg.weight_decay

    def materialize() -> LabelerParams:
        full = local.copy()
        full.E = init.E * decay**state.t
        full.E[live] = local.E
        return full

    state = AdamState.zeros(local)
    rng = np.random.default_rng(seed)
    best_f1 = -1.0
    best_params = init

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(encoded))
        total = 0.0
        for b0 in range(0, len(order), batch_size):
            batch = order[b0 : b0 + batch_size]
            acc = {n: np.zeros_like(a) for n, a in local.items()}
            for idx in batch:
                enc = encoded[idx]
                value, grads = _backward(enc, local, cfg, loss_cfg)
                if not np.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, sequence {enc.doc_id}", epoch, enc.doc_id
                    )
                total += value
                ids, rows = grads.pop("E")
                np.add.at(acc["E"], ids, rows)
                for n, g in grads.items():
                    acc[n] += g
            scale = 1.0 / len(batch)
            for g in acc.values():
                g *= scale
            step(local, acc, state, opt_cfg)

        current = materialize()
        labeler = Labeler(cfg, current, cleaning)
        (prec, rec, f1), span = evaluate_dev(labeler, dev_seqs, dev_docs) if dev_seqs else ((None,) * 3, None)
        rec_ = EpochRecord(epoch, total / len(encoded), prec, rec, f1, span)
        log.records.append(rec_)
        logger.info("epoch %d loss %.5f dev token F1 %s span F1 %s", epoch, rec_.train_loss, f1, span)
        # without a dev set the last epoch wins
        if f1 is None or f1 > best_f1:
            best_f1 = -1.0 if f1 is None else f1
            best_params = current
            log.best_epoch = epoch

    return Labeler(cfg, best_params, cleaning), log


def prepare_all(docs: Iterable[Document], cleaning: CleaningConfig) -> list[LabeledSequence]:
    return [prepare(d, cleaning) for d in docs]


@dataclass(frozen=True)
class TrainSettings:
    """Everything :func:`train` needs besides the data."""

    labeler: LabelerConfig = field(default_factory=LabelerConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossSelector = field(default_factory=LossSelector)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    epochs: int = 20
    batch_size: int = 1
    seed: int = 0

    def fit_sequences(
        self,
        train_seqs: Sequence[LabeledSequence],
        dev_seqs: Sequence[LabeledSequence] = (),
        dev_docs: Sequence[Document] | None = None,
    ) -> tuple[Labeler, TrainingLog]:
        return train(
            train_seqs, dev_seqs, self.labeler, self.optimizer, self.loss,
            epochs=self.epochs, seed=self.seed, batch_size=self.batch_size,
            dev_docs=dev_docs, cleaning=self.cleaning,
        )

    def fit(self, train_docs: Sequence[Document], dev_docs: Sequence[Document] = ()) -> tuple[Labeler, TrainingLog]:
        """Prepare documents with this cleaning config and train."""
        return self.fit_sequences(
            prepare_all(train_docs, self.cleaning),
            prepare_all(dev_docs, self.cleaning),
            list(dev_docs) if dev_docs else None,
        )
