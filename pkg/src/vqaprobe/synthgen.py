"""Synthetic VQA benchmark with controllable language priors and a changing-priors test split.

Scenes are sets of object slots; each slot is one-hot(object class) + one-hot(color)
plus small uniform noise.  Questions come from a fixed set of templates whose
leading phrase is the question type.  Answer priors per question type, and the
object/color co-occurrence, are skewed in train and shifted in ``test_ood``.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import GenerationError, OracleError
from .fileio import atomic_open, atomic_write_text
from .question import QTypeLexicon, Question, render_text

OBJECTS = (
    "dog", "cat", "horse", "cow", "sheep", "bird", "elephant", "bear", "zebra", "giraffe",
    "car", "bus", "truck", "train", "bike", "boat", "plane", "shirt", "hat", "umbrella",
    "kite", "ball", "cup", "bottle", "chair", "bench", "clock", "vase", "flower", "banana",
)
COLORS = ("red", "blue", "green", "yellow", "white", "black", "brown", "orange")
MAX_COUNT = 5
ANSWERS = ("yes", "no") + tuple(str(i) for i in range(MAX_COUNT + 1)) + COLORS

SPLITS = ("train", "test_id", "test_ood")

# neutral trailing phrases; they vary postfix length without changing the answer
FILLERS = ((), ("in", "the", "picture"), ("in", "the", "image"), ("in", "this", "photo"), ("here",))
# optional non-visual words placed before the object noun
MODIFIERS = ("small", "big", "little", "large")

# question type -> (answer type, semantics, postfix template)
TEMPLATES = {
    "is there a": ("YesNo", "exist", ("{obj}",)),
    "is this a": ("YesNo", "exist", ("{obj}",)),
    "are there any": ("YesNo", "exist", ("{obj}",)),
    "is the": ("YesNo", "has_color", ("{obj}", "{color}")),
    "how many": ("Num", "count", ("{obj}", "are", "there")),
    "what color is": ("Other", "color", ("the", "{obj}")),
    "what color are the": ("Other", "color", ("{obj}",)),
    "what is the color of the": ("Other", "color", ("{obj}",)),
}

DEFAULT_PREFIX_SKEW = {
    "is there a": {"yes": 0.85},
    "is this a": {"yes": 0.80},
    "are there any": {"no": 0.80},
    "is the": {"yes": 0.80},
    "how many": {"1": 0.70},
    "what color is": {"red": 0.70},
    "what color are the": {"white": 0.70},
    "what is the color of the": {"blue": 0.70},
}
DEFAULT_OOD_SKEW = {
    "is there a": {"yes": 0.25},
    "is this a": {"yes": 0.25},
    "are there any": {"no": 0.25},
    "is the": {"yes": 0.25},
    "how many": {"1": 0.10},
    "what color is": {"red": 0.05},
    "what color are the": {"white": 0.05},
    "what is the color of the": {"blue": 0.05},
}


def lexicon() -> QTypeLexicon:
    return QTypeLexicon((q, t[0]) for q, t in TEMPLATES.items())


def answers_for(qtype: str) -> tuple[str, ...]:
    sem = TEMPLATES[qtype][1]
    if sem in ("exist", "has_color"):
        return ("yes", "no")
    if sem == "count":
        return tuple(str(i) for i in range(MAX_COUNT + 1))
    return COLORS


@dataclass
class BiasConfig:
    """Generator knobs.

    ``prefix_skew`` / ``ood_skew`` map a question type to a partial answer
    distribution; listed answers get the given probability and the remaining
    mass is spread evenly over the other answers of that type.  An empty
    mapping means uniform.  ``cooccur_skew`` is P(object shows its favorite
    color) in train/test_id and ``cooccur_skew_ood`` the same in test_ood.
    """
    prefix_skew: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_PREFIX_SKEW.items()})
    ood_skew: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_OOD_SKEW.items()})
    cooccur_skew: float = 0.6
    cooccur_skew_ood: float = 0.125
    n_train: int = 20000
    n_test: int = 4000
    n_slots: int = 6
    noise: float = 0.05
    modifier_prob: float = 0.5
    seed: int = 0
    tolerance: float = 0.03
    max_tries: int = 200

    @classmethod
    def from_dict(cls, d: dict) -> "BiasConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise GenerationError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def answer_distribution(qtype: str, partial: dict | None) -> dict[str, float]:
    """Expand a partial skew into a full distribution over the answers of `qtype`."""
    support = answers_for(qtype)
    partial = dict(partial or {})
    for a, p in partial.items():
        if a not in support:
            raise GenerationError(f"answer {a!r} is unreachable for question type {qtype!r}")
        if not 0.0 <= p <= 1.0:
            raise GenerationError(f"probability {p} for {qtype!r}/{a!r} outside [0, 1]")
    listed = sum(partial.values())
    rest = [a for a in support if a not in partial]
    if listed > 1.0 + 1e-9 or (not rest and abs(listed - 1.0) > 1e-9):
        raise GenerationError(f"skew for {qtype!r} sums to {listed}, not 1")
    fill = (1.0 - listed) / len(rest) if rest else 0.0
    return {a: partial.get(a, fill) for a in support}


def _quota(n: int, dist: dict[str, float]) -> dict[str, int]:
    """Largest-remainder integer allocation of n draws to `dist`."""
    raw = {a: n * p for a, p in dist.items()}
    counts = {a: int(math.floor(v)) for a, v in raw.items()}
    order = sorted(dist, key=lambda a: (-(raw[a] - counts[a]), list(dist).index(a)))
    for a in order[: n - sum(counts.values())]:
        counts[a] += 1
    return counts


def favorite_colors(seed: int) -> np.ndarray:
    """Per-object favorite color index used for the co-occurrence skew."""
    rng = np.random.default_rng([seed, 7])
    return rng.integers(0, len(COLORS), size=len(OBJECTS))


@dataclass
class Split:
    name: str
    questions: list
    scenes: np.ndarray          # (n, n_slots, n_objects + n_colors)
    answers: np.ndarray         # indices into ANSWERS

    def __len__(self) -> int:
        return len(self.questions)

    def targets(self) -> np.ndarray:
        """One-hot answer distributions."""
        a = np.zeros((len(self), len(ANSWERS)))
        a[np.arange(len(self)), self.answers] = 1.0
        return a


@dataclass
class Dataset:
    splits: dict
    config: BiasConfig | None = None

    def __getitem__(self, name) -> Split:
        return self.splits[name]


def decode_scene(scene: np.ndarray) -> list[tuple[int, int]]:
    """(object index, color index) for every slot, read off the one-hot blocks."""
    n_obj = len(OBJECTS)
    return [(int(np.argmax(s[:n_obj])), int(np.argmax(s[n_obj:]))) for s in scene]


def _parse_template(question: Question):
    if question.qtype not in TEMPLATES:
        raise OracleError(f"unrecognized question type {question.qtype!r}")
    _, sem, template = TEMPLATES[question.qtype]
    words = list(question.postfix)
    if "{obj}" in template:
        at = template.index("{obj}")
        if at < len(words) - 1 and words[at] in MODIFIERS:
            del words[at]
    if len(words) < len(template) or tuple(words[len(template):]) not in FILLERS:
        raise OracleError(f"question {question.text!r} does not fit its template")
    obj = color = None
    for slot, tok in zip(template, words):
        if slot == "{obj}":
            if tok not in OBJECTS:
                raise OracleError(f"unknown object {tok!r}")
            obj = OBJECTS.index(tok)
        elif slot == "{color}":
            if tok not in COLORS:
                raise OracleError(f"unknown color {tok!r}")
            color = COLORS.index(tok)
        elif slot != tok:
            raise OracleError(f"question {question.text!r} does not fit its template")
    return sem, obj, color


def answer_oracle(question: Question, scene: np.ndarray) -> int:
    """Ground-truth answer index computed from the scene contents."""
    sem, obj, color = _parse_template(question)
    slots = decode_scene(scene)
    matches = [c for o, c in slots if o == obj]
    if sem == "exist":
        ans = "yes" if matches else "no"
    elif sem == "count":
        if len(matches) > MAX_COUNT:
            raise OracleError(f"count {len(matches)} exceeds the answer vocabulary")
        ans = str(len(matches))
    elif sem == "has_color":
        if len(set(matches)) != 1:
            raise OracleError("color question needs the object present with a single color")
        ans = "yes" if matches[0] == color else "no"
    else:
        if len(set(matches)) != 1:
            raise OracleError("color question needs the object present with a single color")
        ans = COLORS[matches[0]]
    return ANSWERS.index(ans)


class _SceneSampler:
    def __init__(self, cfg: BiasConfig, cooccur: float):
        self.cfg = cfg
        self.cooccur = cooccur
        self.fav = favorite_colors(cfg.seed)

    def color(self, rng, obj: int) -> int:
        if rng.random() < self.cooccur:
            return int(self.fav[obj])
        return int(rng.integers(len(COLORS)))

    def pick_object(self, rng, sem: str, answer: str) -> int:
        """Asked-about object; for color answers it shows the co-occurrence skew."""
        if sem == "color" and rng.random() < self.cooccur:
            pool = np.flatnonzero(self.fav == COLORS.index(answer))
            if len(pool):
                return int(rng.choice(pool))
        return int(rng.integers(len(OBJECTS)))

    def propose(self, rng, sem: str, obj: int, answer: str):
        """Scene proposal steered toward `answer`; acceptance is checked by the oracle."""
        k = self.cfg.n_slots
        color = None
        slots_color = None
        if sem == "exist":
            n = int(rng.integers(1, min(3, k) + 1)) if answer == "yes" else 0
        elif sem == "count":
            n = int(answer)
        elif sem == "has_color":
            n = 1
            own = self.color(rng, obj)
            if answer == "yes":
                color = own
            else:
                color = int(rng.choice([c for c in range(len(COLORS)) if c != own]))
            slots_color = own
        else:
            n = 1 if rng.random() < 0.6 else int(rng.integers(1, min(3, k) + 1))
            slots_color = COLORS.index(answer)
        if n > k:
            raise GenerationError(f"answer {answer!r} needs {n} object slots but scenes have {k}")
        objs = np.empty(k, dtype=int)
        cols = np.empty(k, dtype=int)
        where = rng.choice(k, size=n, replace=False)
        others = [o for o in range(len(OBJECTS)) if o != obj]
        for i in range(k):
            if i in where:
                objs[i] = obj
                cols[i] = self.color(rng, obj) if slots_color is None else slots_color
            else:
                objs[i] = others[int(rng.integers(len(others)))]
                cols[i] = self.color(rng, objs[i])
        feats = np.zeros((k, len(OBJECTS) + len(COLORS)))
        feats[np.arange(k), objs] = 1.0
        feats[np.arange(k), len(OBJECTS) + cols] = 1.0
        feats += rng.uniform(-self.cfg.noise, self.cfg.noise, size=feats.shape)
        return feats, color


def _validate(cfg: BiasConfig):
    if cfg.n_train <= 0:
        raise GenerationError("n_train must be positive")
    if cfg.n_test < 0:
        raise GenerationError("n_test must be non-negative")
    if cfg.n_slots < 1:
        raise GenerationError("scenes need at least one object slot")
    if not 0.0 <= cfg.noise < 0.1:
        raise GenerationError("noise magnitude must be in [0, 0.1)")
    for p in (cfg.cooccur_skew, cfg.cooccur_skew_ood):
        if not 0.0 <= p <= 1.0:
            raise GenerationError(f"co-occurrence skew {p} outside [0, 1]")
    for name in (set(cfg.prefix_skew) | set(cfg.ood_skew)) - set(TEMPLATES):
        raise GenerationError(f"unknown question type {name!r} in skew config")


def _generate_split(cfg: BiasConfig, name: str, n: int, skew: dict, cooccur: float,
                    id_offset: int, lex: QTypeLexicon) -> Split:
    split_index = SPLITS.index(name)
    sampler = _SceneSampler(cfg, cooccur)
    qtypes = list(TEMPLATES)
    per_type = _quota(n, {q: 1.0 / len(qtypes) for q in qtypes})
    plan = []
    for qt in qtypes:
        dist = answer_distribution(qt, skew.get(qt))
        for a, c in _quota(per_type[qt], dist).items():
            plan.extend([(qt, a)] * c)
    order = np.random.default_rng([cfg.seed, split_index, 0]).permutation(len(plan))
    plan = [plan[i] for i in order]

    questions, scenes, answers = [], [], []
    for i, (qt, ans) in enumerate(plan):
        rng = np.random.default_rng([cfg.seed, split_index, 1, i])
        answer_type, sem, template = TEMPLATES[qt]
        obj = sampler.pick_object(rng, sem, ans)
        filler = FILLERS[int(rng.integers(len(FILLERS)))]
        modifier = MODIFIERS[int(rng.integers(len(MODIFIERS)))] if rng.random() < cfg.modifier_prob else None
        for _ in range(cfg.max_tries):
            feats, asked_color = sampler.propose(rng, sem, obj, ans)
            words = [t.format(obj=OBJECTS[obj], color=COLORS[asked_color] if asked_color is not None else "")
                     for t in template] + list(filler)
            if modifier is not None:
                words.insert(template.index("{obj}"), modifier)
            q = Question.parse(id_offset + i, render_text(qt.split() + words), lex)
            if answer_oracle(q, feats) == ANSWERS.index(ans):
                break
        else:
            raise GenerationError(f"no scene reached answer {ans!r} for {qt!r} in {cfg.max_tries} tries")
        questions.append(q)
        scenes.append(feats)
        answers.append(ANSWERS.index(ans))
    if n:
        scenes = np.stack(scenes)
    else:
        scenes = np.zeros((0, cfg.n_slots, len(OBJECTS) + len(COLORS)))
    return Split(name, questions, scenes, np.asarray(answers, dtype=np.int64))


def empirical_marginals(split: Split) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    counts: dict[str, dict[str, int]] = {}
    for q, a in zip(split.questions, split.answers):
        counts.setdefault(q.qtype, {}).setdefault(ANSWERS[a], 0)
        counts[q.qtype][ANSWERS[a]] += 1
    for qt, c in counts.items():
        tot = sum(c.values())
        out[qt] = {a: v / tot for a, v in c.items()}
    return out


def check_marginals(split: Split, skew: dict, tolerance: float):
    """Compare P(answer | qtype) with the requested skew.

    Exact quotas can still be off by one sample per question type, so the
    tolerance is widened by 1/n for a type with n questions.
    """
    emp = empirical_marginals(split)
    counts = Counter(q.qtype for q in split.questions)
    for qt, m in emp.items():
        tol = tolerance + 1.0 / counts[qt]
        for a, p in answer_distribution(qt, skew.get(qt)).items():
            if abs(m.get(a, 0.0) - p) > tol:
                raise GenerationError(
                    f"{split.name}: P({a}|{qt}) = {m.get(a, 0.0):.3f}, requested {p:.3f} +- {tol:.3f}")


def generate(cfg: BiasConfig | None = None) -> Dataset:
    """Build train / test_id / test_ood splits."""
    cfg = cfg or BiasConfig()
    _validate(cfg)
    for qt in TEMPLATES:
        answer_distribution(qt, cfg.prefix_skew.get(qt))
        answer_distribution(qt, cfg.ood_skew.get(qt))
    lex = lexicon()
    specs = {
        "train": (cfg.n_train, cfg.prefix_skew, cfg.cooccur_skew),
        "test_id": (cfg.n_test, cfg.prefix_skew, cfg.cooccur_skew),
        "test_ood": (cfg.n_test, cfg.ood_skew, cfg.cooccur_skew_ood),
    }
    splits, offset = {}, 0
    for name in SPLITS:
        n, skew, co = specs[name]
        split = _generate_split(cfg, name, n, skew, co, offset, lex)
        if n:
            check_marginals(split, skew, cfg.tolerance)
        splits[name] = split
        offset += n
    return Dataset(splits, cfg)


def majority_baseline(train: Split) -> dict[str, int]:
    """Per question type majority answer in `train` (ties -> lowest answer index)."""
    counts: dict[str, np.ndarray] = {}
    for q, a in zip(train.questions, train.answers):
        counts.setdefault(q.qtype, np.zeros(len(ANSWERS), dtype=int))[a] += 1
    return {qt: int(np.argmax(c)) for qt, c in counts.items()}


def majority_accuracy(table: dict[str, int], split: Split) -> float:
    hits = [table.get(q.qtype, -1) == a for q, a in zip(split.questions, split.answers)]
    return 100.0 * float(np.mean(hits)) if hits else float("nan")


# ---------------------------------------------------------------- file IO

def _write_jsonl(path: Path, records):
    with atomic_open(path) as f:
        for r in records:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")


def save(dataset: Dataset, out_dir) -> list[Path]:
    """Write questions/scenes/answers JSONL per split plus a meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, split in dataset.splits.items():
        qpath, spath, apath = (out / f"{name}_{kind}.jsonl" for kind in ("questions", "scenes", "answers"))
        _write_jsonl(qpath, (q.to_json() for q in split.questions))
        _write_jsonl(spath, ({"question_id": q.question_id,
                              "features": [[round(float(x), 6) for x in row] for row in s]}
                             for q, s in zip(split.questions, split.scenes)))
        _write_jsonl(apath, ({"question_id": q.question_id, "answer": ANSWERS[a], "answer_type": q.answer_type}
                             for q, a in zip(split.questions, split.answers)))
        written += [qpath, spath, apath]
    meta = {
        "answers": list(ANSWERS),
        "objects": list(OBJECTS),
        "colors": list(COLORS),
        "lexicon": lexicon().to_lines(),
        "splits": {n: len(s) for n, s in dataset.splits.items()},
        "config": dataset.config.to_dict() if dataset.config else None,
    }
    atomic_write_text(out / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(out / "meta.json")
    return written


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def load_split(data_dir, name: str, lex: QTypeLexicon | None = None) -> Split:
    data_dir = Path(data_dir)
    lex = lex or lexicon()
    qrecs = _read_jsonl(data_dir / f"{name}_questions.jsonl")
    questions = [Question.parse(r["question_id"], r["question"], lex, r.get("question_type"),
                                r.get("answer_type")) for r in qrecs]
    scenes = {r["question_id"]: r["features"] for r in _read_jsonl(data_dir / f"{name}_scenes.jsonl")}
    answers = {r["question_id"]: r["answer"] for r in _read_jsonl(data_dir / f"{name}_answers.jsonl")}
    missing = [q.question_id for q in questions if q.question_id not in scenes or q.question_id not in answers]
    if missing:
        raise GenerationError(f"{name}: {len(missing)} questions lack scenes or answers (first {missing[0]})")
    feats = np.asarray([scenes[q.question_id] for q in questions], dtype=np.float64)
    if not questions:
        feats = feats.reshape(0, 1, len(OBJECTS) + len(COLORS))
    ans = np.asarray([ANSWERS.index(answers[q.question_id]) for q in questions], dtype=np.int64)
    return Split(name, questions, feats, ans)


def load(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    return Dataset({name: load_split(data_dir, name) for name in SPLITS
                    if (data_dir / f"{name}_questions.jsonl").exists()})


def read_vqa_json(questions_path, annotations_path=None, lex: QTypeLexicon | None = None) -> list[Question]:
    """Questions from VQAv2-style JSON, with annotation question/answer types when given."""
    lex = lex or QTypeLexicon.vqa()
    qdoc = json.loads(Path(questions_path).read_text(encoding="utf-8"))
    ann = {}
    if annotations_path is not None:
        adoc = json.loads(Path(annotations_path).read_text(encoding="utf-8"))
        ann = {a["question_id"]: a for a in adoc.get("annotations", adoc)}
    out = []
    for rec in qdoc.get("questions", qdoc):
        a = ann.get(rec["question_id"], {})
        out.append(Question.parse(rec["question_id"], rec["question"], lex,
                                  qtype=a.get("question_type"), answer_type=a.get("answer_type")))
    return out
