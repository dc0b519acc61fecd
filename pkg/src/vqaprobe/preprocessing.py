"""Turn questions into fixed-length id arrays under a chosen input mode."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .perturb import VariantKind, apply_variant
from .question import DEFAULT_MAX_LEN, PAD_ID, UNK_ID, Question, Vocabulary, pad

INPUT_MODES = ("question", "prefix", "postfix", "variant1", "variant2", "variant3", "identity")


def check_input_mode(mode: str) -> str:
    if mode not in INPUT_MODES:
        raise ValueError(f"input mode must be one of {INPUT_MODES}, got {mode!r}")
    return mode


def render(q: Question, mode: str, seed: int = 0, epoch: int | None = None) -> tuple:
    """Token sequence a model consumes for `q` under `mode`.

    The prefix mode touches only ``q.prefix``; the postfix mode blanks the
    prefix positions with ``None`` (padding) and keeps the postfix in place.
    """
    if mode in ("question", "identity"):
        return q.tokens
    if mode == "prefix":
        return q.prefix
    if mode == "postfix":
        return (None,) * len(q.prefix) + q.postfix
    return apply_variant(q, VariantKind.parse(mode), seed, epoch)


class QuestionEncoder(TransformerMixin, BaseEstimator):
    """Vocabulary fitting and padding of questions rendered in one input mode.

    The vocabulary only sees the rendering of the training questions, so a
    prefix-mode encoder never learns postfix words.  With ``drop_unknown``
    words outside the vocabulary become padding (unless nothing else is
    left), so a model never attends to a token it was not trained on.
    """

    def __init__(self, input_mode="question", max_len=DEFAULT_MAX_LEN, seed=0, min_count=1, drop_unknown=True):
        self.input_mode = input_mode
        self.max_len = max_len
        self.seed = seed
        self.min_count = min_count
        self.drop_unknown = drop_unknown

    def fit(self, questions, y=None):
        check_input_mode(self.input_mode)
        rendered = [render(q, self.input_mode, self.seed) for q in questions]
        self.vocab_ = Vocabulary.build(rendered, self.min_count)
        return self

    def transform(self, questions, mode: str | None = None, epoch: int | None = None):
        """Padded ids, shape (n, max_len). `mode` overrides the fitted input mode."""
        check_is_fitted(self, "vocab_")
        mode = check_input_mode(mode or self.input_mode)
        out = np.zeros((len(questions), self.max_len), dtype=np.int64)
        for i, q in enumerate(questions):
            out[i] = pad(render(q, mode, self.seed, epoch), self.max_len, self.vocab_)
        if self.drop_unknown:
            unk = out == UNK_ID
            keep = (out != PAD_ID) & ~unk
            rows = keep.any(axis=1)
            out[unk & rows[:, None]] = PAD_ID
        return out
