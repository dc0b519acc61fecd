"""Question representation: tokenization, question-type lexicon, prefix/postfix split, padding."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidQuestion

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_LEN = 14

ANSWER_TYPES = ("YesNo", "Num", "Other")
# VQA annotation spellings
_ANSWER_TYPE_ALIASES = {
    "yesno": "YesNo",
    "yes/no": "YesNo",
    "num": "Num",
    "number": "Num",
    "other": "Other",
}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def normalize_answer_type(tag: str) -> str:
    try:
        return _ANSWER_TYPE_ALIASES[tag.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown answer type {tag!r}") from None


def tokenize(text: str) -> tuple[list[str], bool]:
    """Lowercase and split `text` into word and punctuation tokens.

    Returns the tokens with a terminal "?" removed, and whether one was present.
    """
    if text is None or not text.strip():
        raise InvalidQuestion("empty question text")
    tokens = _TOKEN_RE.findall(text.lower())
    question_mark = bool(tokens) and tokens[-1] == "?"
    if question_mark:
        tokens = tokens[:-1]
    if not tokens:
        raise InvalidQuestion(f"no tokens in {text!r}")
    return tokens, question_mark


class QTypeLexicon:
    """Question-type phrases matched by longest token prefix."""

    def __init__(self, entries: Iterable[tuple[str, str]]):
        self._entries: dict[tuple[str, ...], str] = {}
        for phrase, answer_type in entries:
            key = tuple(phrase.lower().split())
            if not key:
                raise ValueError("empty lexicon entry")
            if key in self._entries:
                raise ValueError(f"duplicate lexicon entry {phrase!r}")
            self._entries[key] = normalize_answer_type(answer_type)
        self._lengths = sorted({len(k) for k in self._entries}, reverse=True)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, phrase) -> bool:
        key = tuple(phrase.split()) if isinstance(phrase, str) else tuple(phrase)
        return key in self._entries

    @property
    def entries(self) -> list[str]:
        return [" ".join(k) for k in self._entries]

    def answer_type(self, phrase: str) -> str:
        return self._entries[tuple(phrase.split())]

    def match(self, tokens: Sequence[str]) -> tuple[str, ...] | None:
        tokens = tuple(tokens)
        for n in self._lengths:
            if n <= len(tokens) and tokens[:n] in self._entries:
                return tokens[:n]
        return None

    @classmethod
    def from_file(cls, path) -> "QTypeLexicon":
        """Read one phrase per line, optionally followed by a tab and an answer-type tag."""
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            phrase, _, tag = line.partition("\t")
            entries.append((phrase.strip(), tag.strip() or "Other"))
        return cls(entries)

    @classmethod
    def vqa(cls) -> "QTypeLexicon":
        """The standard VQA question-type list shipped with the package."""
        with resources.as_file(resources.files("vqaprobe") / "data" / "vqa_qtypes.tsv") as p:
            return cls.from_file(p)

    def to_lines(self) -> list[str]:
        return [f"{' '.join(k)}\t{t}" for k, t in self._entries.items()]


def decompose(tokens: Sequence[str], lexicon: QTypeLexicon):
    """Split tokens into (prefix, postfix, qtype) using the longest matching lexicon entry."""
    if not tokens:
        raise InvalidQuestion("cannot decompose an empty token sequence")
    match = lexicon.match(tokens)
    if match is None:
        return (), tuple(tokens), None
    return match, tuple(tokens[len(match):]), " ".join(match)


@dataclass(frozen=True)
class Question:
    question_id: int | str
    tokens: tuple[str, ...]
    qtype: str | None = None
    prefix: tuple[str, ...] = ()
    postfix: tuple[str, ...] = ()
    answer_type: str = "Other"
    question_mark: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.qtype is None and not self.prefix and not self.postfix:
            object.__setattr__(self, "postfix", self.tokens)
        if self.qtype is None:
            if self.prefix or self.postfix != self.tokens:
                raise InvalidQuestion("untyped question must have empty prefix and postfix == tokens")
        elif self.prefix + self.postfix != self.tokens:
            raise InvalidQuestion("prefix + postfix does not reconstruct the tokens")

    @classmethod
    def parse(cls, question_id, text: str, lexicon: QTypeLexicon, qtype: str | None = None,
              answer_type: str | None = None) -> "Question":
        """Build a question from raw text.

        An annotated `qtype` takes precedence over the lexicon when it is a token
        prefix of the question; otherwise the lexicon's longest match is used.
        """
        tokens, qmark = tokenize(text)
        prefix = None
        if qtype:
            key = tuple(qtype.lower().split())
            if key and tuple(tokens[:len(key)]) == key:
                prefix, postfix, qtype = key, tuple(tokens[len(key):]), " ".join(key)
        if prefix is None:
            prefix, postfix, qtype = decompose(tokens, lexicon)
        if answer_type is not None:
            answer_type = normalize_answer_type(answer_type)
        elif qtype is not None and qtype in lexicon:
            answer_type = lexicon.answer_type(qtype)
        else:
            answer_type = "Other"
        return cls(question_id, tuple(tokens), qtype, prefix, postfix, answer_type, qmark)

    @property
    def text(self) -> str:
        return render_text(self.tokens, self.question_mark)

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "question": self.text,
            "question_type": self.qtype,
            "answer_type": self.answer_type,
        }


def render_text(tokens: Sequence[str], question_mark: bool = True) -> str:
    return " ".join(tokens) + ("?" if question_mark else "")


class Vocabulary:
    """Word <-> id map with id 0 reserved for padding and id 1 for unknown words."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, word: str) -> int:
        return self.stoi.get(word, UNK_ID)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str | None]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(t for seq in sequences for t in seq if t is not None and t != PAD)
        # sorted for a layout independent of sample order
        words = sorted(w for w, c in counts.items() if c >= min_count)
        return cls(words)


def pad(tokens: Sequence[str | None], max_len: int, vocab: Vocabulary) -> np.ndarray:
    """Right-pad with id 0 or right-truncate to exactly `max_len` ids.

    `None` entries in `tokens` are explicit padding slots.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = np.zeros(max_len, dtype=np.int64)
    for i, tok in enumerate(tokens[:max_len]):
        ids[i] = PAD_ID if tok is None or tok == PAD else vocab[tok]
    return ids


def read_questions(path, lexicon: QTypeLexicon) -> list[Question]:
    """Read a JSONL questions file."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(Question.parse(rec["question_id"], rec["question"], lexicon,
                                      qtype=rec.get("question_type"),
                                      answer_type=rec.get("answer_type")))
    return out


def question_records(questions: Iterable[Question], token_lists=None) -> list[dict]:
    recs = []
    for i, q in enumerate(questions):
        rec = q.to_json()
        if token_lists is not None:
            rec["question"] = render_text(token_lists[i], q.question_mark)
        recs.append(rec)
    return recs
