"""Toxic span detection: tokenization with offsets, a small trainable token
labeler (cross-entropy or self-adjusting dice loss), self-training,
character-offset post-processing, ensembling and span-level F1."""

__version__ = "0.1.0"
