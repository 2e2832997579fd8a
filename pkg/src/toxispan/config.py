"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, UTF-8. Keys not listed in
:class:`RunConfig` are rejected. Values are validated by building the module
configs before any work starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from toxispan.corpus import SplitSpec
from toxispan.loss import DiceLossConfig, LossSelector
from toxispan.model import LabelerConfig, OptimizerConfig, TrainSettings
from toxispan.textproc import CleaningConfig, default_contraction_table, load_contraction_table


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # labeler
    embed_dim: int = 32
    hidden_dim: int = 64
    window_radius: int = 2
    hash_buckets: int = 65536
    char_ngram_n: int = 3
    model_seed: int = 0
    toxic_threshold: float = 0.5
    # optimizer
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    # loss
    loss: str = "dice"
    alpha: float = 0.7
    gamma: float = 0.25
    positive_class_weight: float = 1.0
    # training loop
    epochs: int = 20
    batch_size: int = 1
    train_seed: int = 0
    # cleaning
    expand_contractions: bool = True
    remove_digits: bool = True
    remove_fullstops: bool = True
    contraction_table: str = ""
    # self-training
    ssl_iterations: int = 4
    ssl_seed: int = 0
    # corpus
    split: str = "80:10:10"
    split_seed: int = 0
    # prediction
    append_fullstop: bool = False
    # paths
    train: str = ""
    dev: str = ""
    pool: str = ""
    model: str = ""
    out: str = ""
    # recorded for transformer presets; the surrogate labeler ignores them
    max_len: int = 0
    lowercase: bool = False

    def labeler_config(self) -> LabelerConfig:
        return LabelerConfig(
            self.embed_dim, self.hidden_dim, self.window_radius, self.hash_buckets,
            self.char_ngram_n, self.model_seed, self.toxic_threshold,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon, self.weight_decay)

    def loss_selector(self) -> LossSelector:
        return LossSelector(self.loss, self.positive_class_weight, DiceLossConfig(self.alpha, self.gamma))

    def cleaning_config(self) -> CleaningConfig:
        table = load_contraction_table(self.contraction_table) if self.contraction_table else default_contraction_table()
        return CleaningConfig(self.expand_contractions, self.remove_digits, self.remove_fullstops, table)

    def split_spec(self) -> SplitSpec:
        return SplitSpec.parse(self.split, self.split_seed)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            self.labeler_config(), self.optimizer_config(), self.loss_selector(),
            self.cleaning_config(), self.epochs, self.batch_size, self.train_seed,
        )

    def validate(self) -> "RunConfig":
        try:
            self.train_settings()
            self.split_spec()
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.ssl_iterations < 0:
            raise ConfigError("ssl_iterations must be >= 0")
        return self

    def replace(self, **changes) -> "RunConfig":
        unknown = set(changes) - _FIELDS.keys()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def dump(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    """Read a config file (or defaults), apply non-None overrides, validate."""
    cfg = RunConfig()
    if path:
        cfg = parse_config(Path(path).read_text(encoding="utf-8"), cfg)
    cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
