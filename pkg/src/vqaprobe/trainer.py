"""Training and evaluation regimes: input modes, validation modes, debiased training, run matrices."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


from . import synthgen
from .debias import METHODS
from .exceptions import ConfigError, ModelError, VQAProbeError
from .metrics import PredictionRecord, accuracy, flip_ratios, rob, write_records
from .model import VQAClassifier, VQAInputs
from .perturb import VariantKind
from .preprocessing import INPUT_MODES, QuestionEncoder
from .question import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class DebiasConfig:
    method: str = "none"
    lam: float = 1.0
    alpha: float = 0.5
    variant_kind: str = "variant1"
    mix_level: str = "question"
    mix_at_eval: bool = True

    @classmethod
    def from_dict(cls, d: dict | None) -> "DebiasConfig":
        d = dict(d or {})
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**_known(cls, d, "debias"))


@dataclass
class RunConfig:
    name: str = "run"
    train_input: str = "question"
    eval_input: str = "question"
    model_mode: str = "full"
    debias: DebiasConfig = field(default_factory=DebiasConfig)
    seed: int = 0
    epochs: int = 15
    batch_size: int = 128
    lr: float = 1e-3
    embed_dim: int = 64
    hidden_dim: int = 128
    init_scale: float = 0.08
    max_len: int = 14
    perturb_seed: int = 0
    variant2_per_epoch: bool = False
    data_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        deb = DebiasConfig.from_dict(d.pop("debias", None))
        return cls(debias=deb, **_known(cls, d, "run"))

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        if self.train_input not in INPUT_MODES or self.eval_input not in INPUT_MODES:
            raise ConfigError(f"input modes must be among {INPUT_MODES}")
        if self.model_mode not in ("full", "q_only"):
            raise ConfigError(f"model_mode must be 'full' or 'q_only', got {self.model_mode!r}")
        if self.debias.method not in METHODS:
            raise ConfigError(f"debias.method must be one of {METHODS}")
        try:
            VariantKind.parse(self.debias.variant_kind)
        except ValueError:
            raise ConfigError(f"bad debias.variant_kind {self.debias.variant_kind!r}") from None
        if self.debias.lam < 0 or not 0 <= self.debias.alpha <= 1:
            raise ConfigError("debias.lambda must be >= 0 and debias.alpha in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.max_len < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1, max_len >= 1 and lr > 0 required")
        return self

    def digest(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "data_dir"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _known(cls, d: dict, what: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {sorted(unknown)}")
    return d


@dataclass
class TrainedRun:
    config: RunConfig
    clf: VQAClassifier
    encoder: QuestionEncoder
    loss_log: list

    def save(self, path):
        extra = {"run": self.config.to_dict(), "vocab": self.encoder.vocab_.itos,
                 "encoder": self.encoder.get_params()}
        self.clf.save(path, extra=extra)

    @classmethod
    def load(cls, path) -> "TrainedRun":
        clf = VQAClassifier.load(path)
        extra = clf.extra_
        if "vocab" not in extra:
            raise ModelError(f"{path} lacks a vocabulary")
        enc = QuestionEncoder(**extra["encoder"])
        enc.vocab_ = Vocabulary(extra["vocab"][2:])
        if len(enc.vocab_) != clf.params_["embed"].shape[0]:
            raise ModelError("checkpoint vocabulary and embedding table disagree")
        return cls(RunConfig.from_dict(extra["run"]), clf, enc, list(clf.loss_curve_))


def _variant_mode(cfg: RunConfig) -> str:
    return VariantKind.parse(cfg.debias.variant_kind).value


def make_inputs(encoder: QuestionEncoder, split: synthgen.Split, mode: str, cfg: RunConfig,
                epoch: int | None = None) -> VQAInputs:
    ids = encoder.transform(split.questions, mode=mode, epoch=epoch)
    var = None
    if cfg.debias.method != "none":
        var = encoder.transform(split.questions, mode=_variant_mode(cfg), epoch=epoch)
    return VQAInputs(ids, split.scenes if cfg.model_mode == "full" else None, var)


def _load_dataset(cfg: RunConfig, dataset):
    if dataset is not None:
        return dataset
    if not cfg.data_dir:
        raise ConfigError("no dataset given and data_dir unset")
    if not (Path(cfg.data_dir) / "train_questions.jsonl").exists():
        raise ConfigError(f"no benchmark files under {cfg.data_dir}")
    return synthgen.load(cfg.data_dir)


def train(cfg: RunConfig, dataset: synthgen.Dataset | None = None, checkpoint=None) -> TrainedRun:
    """Fit a model on the train split rendered in ``cfg.train_input``."""
    cfg.validate()
    dataset = _load_dataset(cfg, dataset)
    tr = dataset["train"]
    if len(tr) == 0:
        raise ConfigError("empty train split")
    encoder = QuestionEncoder(cfg.train_input, cfg.max_len, cfg.perturb_seed).fit(tr.questions)
    X = make_inputs(encoder, tr, cfg.train_input, cfg)
    per_epoch = cfg.variant2_per_epoch and "variant2" in (cfg.train_input, _variant_mode(cfg))
    epoch_inputs = (lambda e: make_inputs(encoder, tr, cfg.train_input, cfg, epoch=e)) if per_epoch else None
    clf = VQAClassifier(
        mode=cfg.model_mode, embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim, epochs=cfg.epochs,
        batch_size=cfg.batch_size, lr=cfg.lr, init_scale=cfg.init_scale, seed=cfg.seed,
        debias=cfg.debias.method, lam=cfg.debias.lam, alpha=cfg.debias.alpha,
        mix_level=cfg.debias.mix_level, mix_at_eval=cfg.debias.mix_at_eval,
        vocab_size=len(encoder.vocab_), n_answers=len(synthgen.ANSWERS), max_len=cfg.max_len,
    )
    t0 = time.perf_counter()
    clf.fit(X, tr.answers, epoch_inputs=epoch_inputs,
            on_epoch=lambda e, l: log.info("run=%s epoch=%d loss=%.6f", cfg.name, e, l))
    log.info("run=%s train_seconds=%.2f", cfg.name, time.perf_counter() - t0)
    run = TrainedRun(cfg, clf, encoder, list(clf.loss_curve_))
    if checkpoint is not None:
        run.save(checkpoint)
    return run


def evaluate(run: TrainedRun, split: synthgen.Split, eval_input: str | None = None,
             return_encodings: bool = False):
    """One PredictionRecord per sample of `split` with the question rendered as `eval_input`."""
    mode = eval_input or run.config.eval_input
    if mode not in INPUT_MODES:
        raise ConfigError(f"bad eval input {mode!r}")
    X = make_inputs(run.encoder, split, mode, run.config)
    if X.scenes is not None and X.scenes.shape[2] != run.clf.params_["obj_map"].shape[1]:
        raise ModelError("scene feature size does not match the checkpoint")
    enc = run.clf.encode(X)
    preds = enc.p.argmax(axis=1)
    answers = synthgen.ANSWERS
    records = [PredictionRecord(q.question_id, answers[p], answers[g], bool(p == g), q.qtype, q.answer_type)
               for q, p, g in zip(split.questions, preds, split.answers)]
    return (records, enc) if return_encodings else records


# ---------------------------------------------------------------- matrices

@dataclass
class MatrixConfig:
    train_inputs: list = field(default_factory=lambda: ["question"])
    eval_inputs: list = field(default_factory=lambda: ["question"])
    debias: list = field(default_factory=lambda: [{}])
    seeds: list = field(default_factory=lambda: [0])
    splits: list = field(default_factory=lambda: ["test_id", "test_ood"])
    base: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixConfig":
        return cls(**_known(cls, dict(d), "matrix"))

    def expand(self) -> list[RunConfig]:
        """Explicit ``cells`` plus the product train_inputs x debias x seeds."""
        out = []
        for c in self.cells:
            out.append(RunConfig.from_dict({**self.base, **c}))
        if self.train_inputs and self.debias and self.seeds:
            for ti, deb, seed in itertools.product(self.train_inputs, self.debias, self.seeds):
                deb = dict(deb)
                method = deb.get("method", "none")
                name = f"{ti}" + ("" if method == "none" else f"+{method}") + f"_s{seed}"
                base_deb = dict(self.base.get("debias", {}))
                out.append(RunConfig.from_dict({**self.base, "name": name, "train_input": ti,
                                                "seed": seed, "debias": {**base_deb, **deb}}))
        return out


def cell_records_name(cell: str, eval_input: str, split: str) -> str:
    return f"{cell}__{eval_input}__{split}.jsonl"


def run_matrix(matrix: MatrixConfig, dataset=None, out_dir=None, jobs: int = 1) -> dict:
    """Train every cell, evaluate it on each eval input x split, and aggregate.

    Failed cells are recorded with their error and the matrix continues.
    Returns {"cells": [...], "records": {(cell, eval_input, split): records}}.
    """
    runs = matrix.expand()
    if not runs:
        return {"cells": [], "records": {}}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "predictions").mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = _load_dataset(runs[0], None)

    def one(cfg: RunConfig):
        t0 = time.perf_counter()
        entry = {"name": cfg.name, "config": cfg.to_dict(), "config_hash": cfg.digest()}
        recs = {}
        try:
            ckpt = out / "checkpoints" / f"{cfg.name}.json" if out is not None else None
            run = train(cfg, dataset, checkpoint=ckpt)
            entry["final_loss"] = run.loss_log[-1] if run.loss_log else None
            if ckpt is not None:
                entry["checkpoint_sha256"] = hashlib.sha256(ckpt.read_bytes()).hexdigest()
            for ei, sp in itertools.product(matrix.eval_inputs, matrix.splits):
                r = evaluate(run, dataset[sp], ei)
                recs[(cfg.name, ei, sp)] = r
                if out is not None:
                    write_records(out / "predictions" / cell_records_name(cfg.name, ei, sp), r)
            entry["status"] = "ok"
        except (VQAProbeError, KeyError, ValueError) as e:
            log.error("cell=%s status=failed error=%r", cfg.name, e)
            entry["status"] = "failed"
            entry["error"] = f"{type(e).__name__}: {e}"
        entry["seconds"] = round(time.perf_counter() - t0, 3)
        return entry, recs

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(one, runs))
    else:
        results = [one(c) for c in runs]
    cells, records = [], {}
    for entry, recs in results:
        cells.append(entry)
        records.update(recs)
    return {"cells": cells, "records": records}


def summarize(records: dict, baseline_input: str = "question") -> list[dict]:
    """One row per (cell, eval_input, split): accuracy breakdown, plus Rob and flips
    against the same cell's original-question evaluation and against the
    question-trained cell with the same seed."""
    rows = []
    for (cell, ei, sp), recs in sorted(records.items()):
        acc = accuracy(recs)
        row = {"cell": cell, "eval_input": ei, "split": sp, **acc.row(), "n": len(recs)}
        ref = records.get((cell, baseline_input, sp))
        if ref is not None and ei != baseline_input:
            row["Rob"] = rob(ref, recs)
        seed = cell.rsplit("_s", 1)[-1] if "_s" in cell else None
        base = records.get((f"{baseline_input}_s{seed}", ei, sp)) if seed is not None else None
        if base is not None and base is not recs:
            row["c2w"], row["w2c"] = flip_ratios(base, recs)
        rows.append(row)
    return rows
