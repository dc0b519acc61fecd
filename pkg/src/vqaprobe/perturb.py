"""Word-order perturbations of questions (variant questions)."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from .question import Question


class VariantKind(str, enum.Enum):
    VARIANT1 = "variant1"
    VARIANT2 = "variant2"
    VARIANT3 = "variant3"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value) -> "VariantKind":
        if isinstance(value, cls):
            return value
        value = str(value).lower()
        if value in ("1", "2", "3"):
            value = "variant" + value
        return cls(value)


def _key_int(question_id) -> int:
    if isinstance(question_id, (int, np.integer)) and question_id >= 0:
        return int(question_id)
    digest = hashlib.blake2b(str(question_id).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class PerturbSeed:
    seed: int
    question_id: int | str
    epoch: int | None = None

    def rng(self) -> np.random.Generator:
        """Random stream private to this (seed, question[, epoch]) triple."""
        entropy = [self.seed & (2**64 - 1), _key_int(self.question_id)]
        if self.epoch is not None:
            entropy.append(self.epoch + 1)
        return np.random.default_rng(np.random.SeedSequence(entropy))


def variant1(q: Question) -> tuple[str, ...]:
    """Swap prefix and postfix. Untyped questions pass through unchanged."""
    if q.qtype is None:
        return q.tokens
    return q.postfix + q.prefix


def variant2(q: Question, seed: PerturbSeed | int) -> tuple[str, ...]:
    """Uniformly random reordering of all words, reproducible per (seed, question_id)."""
    if not isinstance(seed, PerturbSeed):
        seed = PerturbSeed(int(seed), q.question_id)
    tokens = list(q.tokens)
    rng = seed.rng()
    # Fisher-Yates
    for i in range(len(tokens) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        tokens[i], tokens[j] = tokens[j], tokens[i]
    return tuple(tokens)


def variant3(q: Question) -> tuple[str, ...]:
    return q.tokens[::-1]


def apply_variant(q: Question, kind, seed: int = 0, epoch: int | None = None) -> tuple[str, ...]:
    kind = VariantKind.parse(kind)
    if kind is VariantKind.VARIANT1:
        return variant1(q)
    if kind is VariantKind.VARIANT2:
        return variant2(q, PerturbSeed(seed, q.question_id, epoch))
    if kind is VariantKind.VARIANT3:
        return variant3(q)
    return q.tokens


def morph(questions, kind, seed: int = 0) -> list[tuple[str, ...]]:
    return [apply_variant(q, kind, seed) for q in questions]
