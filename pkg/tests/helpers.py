"""Shared oracles for the model tests: random inputs and a finite-difference check."""

import numpy as np

from toxispan.loss import DiceLossConfig, LossSelector
from toxispan.model import LabelerConfig, LabelerParams, _encode, _forward, backward, sequence_loss
from toxispan.textproc import LabeledSequence, TokenSpan

ALPHABET = list("abcdefgxyz'-")
# (alpha, gamma) pairs explored in the dice-loss hyperparameter sweep
DICE_GRID = [(0.0, 1.0), (0.0, 2.0), (0.5, 1.0), (0.7, 1.0), (0.8, 1.0), (0.7, 0.5), (0.7, 0.25), (0.4, 0.25)]


def random_sequence(rng, n_tokens=None, inactive_frac=0.2, doc_id=0):
    n = int(rng.integers(1, 9)) if n_tokens is None else n_tokens
    toks, pos = [], 0
    for _ in range(n):
        length = int(rng.integers(1, 7))
        text = "".join(rng.choice(ALPHABET, size=length))
        active = bool(rng.random() >= inactive_frac)
        toks.append(TokenSpan(text if active else "", pos, pos + length, active))
        pos += length + 1
    labels = tuple(int(t.active and rng.random() < 0.4) for t in toks)
    return LabeledSequence(doc_id, tuple(toks), labels)


def random_params(cfg, rng, scale=0.5):
    p = LabelerParams.zeros(cfg)
    for _, arr in p.items():
        arr[...] = rng.uniform(-scale, scale, arr.shape)
    return p


def random_config(rng):
    return LabelerConfig(
        embed_dim=int(rng.integers(2, 6)),
        hidden_dim=int(rng.integers(2, 8)),
        window_radius=int(rng.integers(0, 3)),
        hash_buckets=int(rng.integers(16, 200)),
        char_ngram_n=int(rng.integers(2, 4)),
    )


def random_loss(rng, kind=None):
    kind = kind or ["ce", "wce", "dice"][int(rng.integers(3))]
    a, g = DICE_GRID[int(rng.integers(len(DICE_GRID)))]
    return LossSelector(kind, positive_class_weight=float(rng.uniform(0.5, 12)), dice=DiceLossConfig(a, g))


def _relu_pattern(seq, params, cfg):
    _, (_, pre, _) = _forward(_encode(seq, cfg), params, cfg)
    return pre > 0


def gradient_errors(seq, params, cfg, loss, rng, entries_per_block=6, h=1e-4):
    """Blockwise relative error ||analytic - numeric|| / max(norms) per parameter.

    Numeric gradients are central differences of the sequence loss. Entries
    whose perturbation flips a ReLU are skipped (the loss is not
    differentiable across the kink).
    """
    analytic = backward(seq, params, cfg, loss)
    base_pattern = _relu_pattern(seq, params, cfg)
    used_rows = np.unique(_encode(seq, cfg).flat_ids)
    errors = {}
    for name, arr in params.items():
        if arr.ndim == 0:
            candidates = [()]
        elif name == "E":
            if len(used_rows) == 0:
                continue
            candidates = [(int(rng.choice(used_rows)), int(rng.integers(arr.shape[1]))) for _ in range(entries_per_block)]
        else:
            candidates = [tuple(int(rng.integers(s)) for s in arr.shape) for _ in range(entries_per_block)]
        ana, num = [], []
        for idx in candidates:
            orig = arr[idx].copy()
            arr[idx] = orig + h
            up, pat_up = sequence_loss(seq, params, cfg, loss), _relu_pattern(seq, params, cfg)
            arr[idx] = orig - h
            down, pat_down = sequence_loss(seq, params, cfg, loss), _relu_pattern(seq, params, cfg)
            arr[idx] = orig
            if not (np.array_equal(pat_up, base_pattern) and np.array_equal(pat_down, base_pattern)):
                continue
            ana.append(analytic[name][idx])
            num.append((up - down) / (2 * h))
        if not ana:
            continue
        ana, num = np.array(ana), np.array(num)
        denom = max(np.linalg.norm(ana), np.linalg.norm(num))
        errors[name] = 0.0 if denom < 1e-10 else float(np.linalg.norm(ana - num) / denom)
    return errors
