"""Token losses and their derivatives with respect to the toxic probability.

All functions are elementwise: ``p`` and ``y`` may be scalars or arrays of
matching shape. The public functions reject probabilities outside the open
interval (0, 1); :class:`LossSelector` clamps first, which is what training
uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

P_CLAMP = 1e-7

LOSS_KINDS = ("ce", "wce", "dice")


@dataclass(frozen=True)
class DiceLossConfig:
    alpha: float = 0.7
    gamma: float = 0.25

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"dice alpha must be >= 0, got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"dice gamma must be > 0, got {self.gamma}")


def _check_domain(p):
    p = np.asarray(p, dtype=np.float64)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("probability must lie strictly between 0 and 1")
    return p


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _dice(p, y, alpha, gamma):
    f = (1.0 - p) ** alpha * p
    return 1.0 - (2.0 * f * y + gamma) / (f + y + gamma)


def _dice_grad(p, y, alpha, gamma):
    f = (1.0 - p) ** alpha * p
    df = (1.0 - p) ** (alpha - 1.0) * (1.0 - p * (1.0 + alpha))
    num = 2.0 * f * y + gamma
    den = f + y + gamma
    # d/dp [1 - num/den]
    return -(2.0 * y * df * den - num * df) / (den * den)


def dice_loss(p, y, cfg: DiceLossConfig = DiceLossConfig()):
    """Self-adjusting dice loss ``1 - (2 f y + g) / (f + y + g)``, ``f = (1-p)^a p``.

    The ``(1-p)^alpha`` factor shrinks the contribution of confidently
    classified tokens.
    """
    p = _check_domain(p)
    return _out(_dice(p, np.asarray(y, dtype=np.float64), cfg.alpha, cfg.gamma))


def dice_grad(p, y, cfg: DiceLossConfig = DiceLossConfig()):
    p = _check_domain(p)
    return _out(_dice_grad(p, np.asarray(y, dtype=np.float64), cfg.alpha, cfg.gamma))


def ce_loss(p, y):
    p = _check_domain(p)
    y = np.asarray(y, dtype=np.float64)
    return _out(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def ce_grad(p, y):
    p = _check_domain(p)
    y = np.asarray(y, dtype=np.float64)
    return _out(-y / p + (1.0 - y) / (1.0 - p))


def wce_loss(p, y, w_pos: float):
    """Cross-entropy with the toxic (y=1) term scaled by ``w_pos``."""
    p = _check_domain(p)
    y = np.asarray(y, dtype=np.float64)
    return _out(-(w_pos * y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def wce_grad(p, y, w_pos: float):
    p = _check_domain(p)
    y = np.asarray(y, dtype=np.float64)
    return _out(-w_pos * y / p + (1.0 - y) / (1.0 - p))


@dataclass(frozen=True)
class LossSelector:
    """Which token loss to train with, plus its hyperparameters."""

    kind: str = "dice"
    positive_class_weight: float = 1.0
    dice: DiceLossConfig = field(default_factory=DiceLossConfig)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not self.positive_class_weight > 0:
            raise ValueError("positive_class_weight must be > 0")

    def value(self, p, y):
        p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
        if self.kind == "dice":
            return dice_loss(p, y, self.dice)
        if self.kind == "wce":
            return wce_loss(p, y, self.positive_class_weight)
        return ce_loss(p, y)

    def grad(self, p, y):
        """dL/dp evaluated at the clamped probability."""
        p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
        if self.kind == "dice":
            return dice_grad(p, y, self.dice)
        if self.kind == "wce":
            return wce_grad(p, y, self.positive_class_weight)
        return ce_grad(p, y)
