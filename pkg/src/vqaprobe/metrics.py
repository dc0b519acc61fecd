"""Accuracy breakdowns, robustness to variant questions, prediction flips, encoding similarity."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .exceptions import AlignmentError, SimError
from .fileio import atomic_open
from .question import ANSWER_TYPES

NA = None


@dataclass(frozen=True)
class PredictionRecord:
    question_id: int | str
    pred: str
    gold: str
    correct: bool
    qtype: str | None
    answer_type: str

    def __post_init__(self):
        if self.correct != (self.pred == self.gold):
            raise ValueError(f"record {self.question_id}: correct flag disagrees with pred/gold")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "PredictionRecord":
        return cls(d["question_id"], str(d["pred"]), str(d["gold"]), bool(d["correct"]),
                   d.get("qtype"), d.get("answer_type", "Other"))


def round_pct(x: float | None, places: int = 2) -> float | None:
    """Round half-to-even at `places` decimals (table precision)."""
    if x is None:
        return None
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_EVEN))


@dataclass
class AccuracyReport:
    all: float | None
    yes_no: float | None
    num: float | None
    other: float | None
    counts: dict = field(default_factory=dict)
    per_qtype: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"All": self.all, "Yes/No": self.yes_no, "Num": self.num, "Other": self.other}


def _pct(hits: int, total: int) -> float | None:
    return 100.0 * hits / total if total else NA


def accuracy(records) -> AccuracyReport:
    """Percent correct overall, per answer type and per question type.

    Groups with no records report None and count 0.
    """
    records = list(records)
    if not records:
        raise ValueError("accuracy of an empty record list")
    total = Counter()
    hits = Counter()
    qt_total = Counter()
    qt_hits = Counter()
    for r in records:
        total[r.answer_type] += 1
        hits[r.answer_type] += r.correct
        qt_total[r.qtype] += 1
        qt_hits[r.qtype] += r.correct
    by_type = {t: _pct(hits[t], total[t]) for t in ANSWER_TYPES}
    return AccuracyReport(
        all=_pct(sum(hits.values()), len(records)),
        yes_no=by_type["YesNo"],
        num=by_type["Num"],
        other=by_type["Other"],
        counts={"All": len(records), **{t: total[t] for t in ANSWER_TYPES}},
        per_qtype={qt: {"acc": _pct(qt_hits[qt], n), "count": n} for qt, n in sorted(qt_total.items(), key=lambda kv: str(kv[0]))},
    )


def align(orig, variant) -> list[tuple[PredictionRecord, PredictionRecord]]:
    """Pair records by question_id; a missing or extra id is an error."""
    orig = list(orig)
    by_id = {r.question_id: r for r in variant}
    if len(by_id) != len(orig) or any(r.question_id not in by_id for r in orig):
        missing = [r.question_id for r in orig if r.question_id not in by_id]
        raise AlignmentError(f"record sets do not align ({len(orig)} vs {len(by_id)}; missing {missing[:5]})")
    return [(r, by_id[r.question_id]) for r in orig]


def rob(orig, variant) -> float | None:
    """Percent of originally-correct questions whose variant is also answered correctly."""
    pairs = align(orig, variant)
    n_rq = sum(o.correct for o, _ in pairs)
    n_both = sum(o.correct and v.correct for o, v in pairs)
    return _pct(n_both, n_rq)


def flip_ratios(orig, variant_model) -> tuple[float | None, float | None]:
    """(correct->wrong %, wrong->correct %), each relative to the original model's base set."""
    pairs = align(orig, variant_model)
    right = [v for o, v in pairs if o.correct]
    wrong = [v for o, v in pairs if not o.correct]
    c2w = _pct(sum(not v.correct for v in right), len(right))
    w2c = _pct(sum(v.correct for v in wrong), len(wrong))
    return c2w, w2c


def flip_breakdown(orig, variant_model, top_k: int = 10) -> dict:
    """Question-type histograms of flipped samples, per answer type and direction.

    Returns {"wrong_to_correct": {answer_type: [(qtype, count), ...]}, "correct_to_wrong": {...}},
    each list sorted by count (desc) then qtype, truncated to `top_k`.
    """
    pairs = align(orig, variant_model)
    hist = {"wrong_to_correct": {}, "correct_to_wrong": {}}
    for o, v in pairs:
        if o.correct == v.correct:
            continue
        key = "wrong_to_correct" if v.correct else "correct_to_wrong"
        hist[key].setdefault(o.answer_type, Counter())[o.qtype] += 1
    out = {}
    for key, groups in hist.items():
        out[key] = {
            at: sorted(c.items(), key=lambda kv: (-kv[1], str(kv[0])))[:top_k]
            for at, c in sorted(groups.items())
        }
    return out


def simi(q_encs, var_encs) -> float:
    """1 - mean cosine between aligned encodings (0 for identical, 2 for antipodal).

    Despite the name this is a dissimilarity.
    """
    a = np.atleast_2d(np.asarray(q_encs, dtype=np.float64))
    b = np.atleast_2d(np.asarray(var_encs, dtype=np.float64))
    if a.shape != b.shape or len(a) == 0:
        raise ValueError(f"encodings must be aligned and non-empty, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise SimError("zero encoding")
    cos = np.clip(np.sum(a * b, axis=1) / (na * nb), -1.0, 1.0)
    return float(1.0 - cos.mean())


def prefix_attention_mass(token_attn, prefix_lengths, prefix_offsets=None) -> float:
    """Mean total token-attention weight on prefix positions.

    `prefix_offsets[i]` is where the prefix starts in the rendered sequence (0
    for the original question order).
    """
    token_attn = np.asarray(token_attn)
    offsets = np.zeros(len(token_attn), dtype=int) if prefix_offsets is None else np.asarray(prefix_offsets)
    mass = [row[o:o + k].sum() / row.sum() for row, k, o in zip(token_attn, prefix_lengths, offsets)]
    return float(np.mean(mass))


# ---------------------------------------------------------------- IO

def write_records(path, records):
    with atomic_open(path) as f:
        for r in records:
            f.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def read_records(path) -> list[PredictionRecord]:
    with open(path, encoding="utf-8") as f:
        return [PredictionRecord.from_json(json.loads(line)) for line in f if line.strip()]
