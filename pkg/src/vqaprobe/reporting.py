"""Report bundle: CSV tables and a plain-text rendering built from prediction dumps."""
from __future__ import annotations

import csv
import io
import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .fileio import atomic_write_text
from .metrics import (accuracy, flip_breakdown, flip_ratios, prefix_attention_mass, read_records, rob,
                      round_pct, simi)
from .model import forward
from .trainer import summarize

CELL_RE = re.compile(r"^(?P<train>[a-z0-9]+)(?:\+(?P<method>[a-z]+))?_s(?P<seed>-?\d+)$")
DUMP_RE = re.compile(r"^(?P<cell>.+)__(?P<eval>[a-z0-9]+)__(?P<split>[a-z_]+)\.jsonl$")
ACC_COLS = ("All", "Yes/No", "Num", "Other")
VARIANTS = ("variant1", "variant2", "variant3")


def parse_cell(name: str):
    """'variant1+mixing_s42' -> ('variant1', 'mixing', 42); None for free-form names."""
    m = CELL_RE.match(name)
    if not m:
        return None
    return m["train"], m["method"] or "none", int(m["seed"])


def load_dumps(pred_dir) -> dict:
    """{(cell, eval_input, split): records} for every dump under `pred_dir`."""
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise ConfigError(f"no prediction directory {pred_dir}")
    out = {}
    for p in sorted(pred_dir.glob("*.jsonl")):
        m = DUMP_RE.match(p.name)
        if m:
            out[(m["cell"], m["eval"], m["split"])] = read_records(p)
    return out


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "NA"
    if isinstance(x, float):
        return f"{round_pct(x):.2f}"
    return str(x)


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


class Table:
    def __init__(self, name: str, title: str, columns):
        self.name, self.title, self.columns, self.rows = name, title, list(columns), []

    def add(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [self.columns] + [[_fmt(r.get(c)) for c in self.columns] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        line = lambda row: "  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(row, widths)))
        rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
        body = [line(cells[0]), rule] + [line(r) for r in cells[1:]]
        return f"{self.title}\n{rule}\n" + "\n".join(body) + "\n"


def _index(records):
    """{(train_input, method): {seed: cell}} for conventionally named cells."""
    idx = defaultdict(dict)
    for cell, _, _ in records:
        parsed = parse_cell(cell)
        if parsed:
            idx[parsed[:2]][parsed[2]] = cell
    return idx


def _splits(records):
    order = {"train": 0, "test_id": 1, "test_ood": 2}
    return sorted({sp for _, _, sp in records}, key=lambda s: (order.get(s, 9), s))


def _acc_rows(table, records, idx, key, label, splits, eval_input="question"):
    """Per-seed rows plus a mean row for the cells of one (train_input, method) group."""
    seeds = sorted(idx.get(key, {}))
    per_seed = []
    for seed in seeds:
        cell = idx[key][seed]
        row = {"model": label, "seed": seed}
        for sp in splits:
            recs = records.get((cell, eval_input, sp))
            if recs:
                for c, v in accuracy(recs).row().items():
                    row[f"{sp}:{c}"] = v
        per_seed.append(row)
        table.add(**row)
    if len(per_seed) > 1:
        table.add(model=label, seed="mean",
                  **{c: _mean([r.get(c) for r in per_seed]) for c in table.columns[2:]})


def build_tables(records: dict) -> list[Table]:
    idx = _index(records)
    splits = [s for s in _splits(records) if s != "train"]
    acc_cols = ["model", "seed"] + [f"{sp}:{c}" for sp in splits for c in ACC_COLS]
    tables = []

    t1 = Table("table1_inputs", "Training input: accuracy (%) by answer type, evaluated on original questions", acc_cols)
    for ti in ("question", "prefix", "postfix"):
        _acc_rows(t1, records, idx, (ti, "none"), ti, splits)
    tables.append(t1)

    t2 = Table("table2_robustness", "Question-trained model on variant questions: accuracy (%) and Rob (%)",
               ["eval_input", "seed"] + [f"{sp}:{c}" for sp in splits for c in ("All", "Rob")])
    for seed, cell in sorted(idx.get(("question", "none"), {}).items()):
        for ei in ("question",) + VARIANTS:
            row = {"eval_input": ei, "seed": seed}
            for sp in splits:
                recs, ref = records.get((cell, ei, sp)), records.get((cell, "question", sp))
                if recs:
                    row[f"{sp}:All"] = accuracy(recs).all
                    row[f"{sp}:Rob"] = rob(ref, recs) if ref else None
            if len(row) > 2:
                t2.add(**row)
    tables.append(t2)

    t3 = Table("table3_variant_training", "Training on variant questions: accuracy (%) on original questions", acc_cols)
    for ti in ("question",) + VARIANTS:
        _acc_rows(t3, records, idx, (ti, "none"), ti, splits)
    tables.append(t3)

    t4 = Table("table4_flips", "Prediction flips of variant-trained vs question-trained models (%)",
               ["model", "seed"] + [f"{sp}:{c}" for sp in splits for c in ("c2w", "w2c")])
    base = idx.get(("question", "none"), {})
    for ti in VARIANTS:
        for seed, cell in sorted(idx.get((ti, "none"), {}).items()):
            if seed not in base:
                continue
            row = {"model": ti, "seed": seed}
            for sp in splits:
                o, v = records.get((base[seed], "question", sp)), records.get((cell, "question", sp))
                if o and v:
                    row[f"{sp}:c2w"], row[f"{sp}:w2c"] = flip_ratios(o, v)
            t4.add(**row)
    tables.append(t4)

    t5 = Table("table5_debias", "Debiased training on question inputs: accuracy (%) on original questions", acc_cols)
    for method in ("none", "mixing", "contrastive"):
        _acc_rows(t5, records, idx, ("question", method), "question" if method == "none" else f"+{method}", splits)
    tables.append(t5)

    tables.append(_summary_table(records))
    return tables


def _summary_table(records) -> Table:
    rows = summarize(records)
    t = Table("summary", "All dumps", ["cell", "eval_input", "split", "n", *ACC_COLS, "Rob", "c2w", "w2c"])
    for r in rows:
        t.add(**r)
    return t


def flip_histograms(records: dict, split: str = "test_ood", top_k: int = 10) -> Table:
    """Top-k question types per answer type among flipped samples, variant-trained vs question-trained."""
    idx = _index(records)
    base = idx.get(("question", "none"), {})
    t = Table(f"fig2_flips_{split}", f"Flip histograms on {split} (top-{top_k} question types)",
              ["model", "seed", "direction", "answer_type", "rank", "qtype", "count"])
    for ti in VARIANTS:
        for seed, cell in sorted(idx.get((ti, "none"), {}).items()):
            o, v = records.get((base.get(seed), "question", split)), records.get((cell, "question", split))
            if not (o and v):
                continue
            for direction, groups in flip_breakdown(o, v, top_k).items():
                for at, hist in groups.items():
                    for rank, (qt, n) in enumerate(hist, 1):
                        t.add(model=ti, seed=seed, direction=direction, answer_type=at, rank=rank, qtype=qt, count=n)
    return t


def encoding_stats(run, split) -> dict:
    """simi between original and variant question encodings, and prefix attention mass.

    Both come from the plain forward pass (no feature mixing), so every model
    is measured on the same footing.
    """
    params, mode = run.clf.params_, run.clf.mode
    scenes = split.scenes if mode == "full" else None
    encs = {}
    for ei in ("question",) + VARIANTS:
        ids = run.encoder.transform(split.questions, mode=ei)
        encs[ei] = forward(params, ids, scenes, mode)
    out = {f"simi_{v}": simi(encs["question"].q_enc, encs[v].q_enc) for v in VARIANTS}
    out["prefix_mass"] = prefix_attention_mass(encs["question"].token_attn, [len(q.prefix) for q in split.questions])
    return out


def encoding_table(stats: dict) -> Table:
    """`stats`: {(cell, split): encoding_stats(...)}."""
    cols = ["prefix_mass"] + [f"simi_{v}" for v in VARIANTS]
    t = Table("fig34_encodings", "Question-encoding dissimilarity (simi) and prefix attention mass", ["cell", "split", *cols])
    for (cell, sp), st in sorted(stats.items()):
        t.add(cell=cell, split=sp, **{c: f"{st[c]:.4f}" for c in cols})
    return t


def write_bundle(tables, out_dir) -> list[Path]:
    """One CSV per table plus tables.txt with all of them rendered."""
    out = Path(out_dir)
    paths = [atomic_write_text(out / f"{t.name}.csv", t.to_csv()) for t in tables]
    paths.append(atomic_write_text(out / "tables.txt", "\n".join(t.to_text() for t in tables)))
    return paths


def report(pred_dir, out_dir, extra_tables=()) -> list[Path]:
    records = load_dumps(pred_dir)
    if not records:
        raise ConfigError(f"no prediction dumps under {pred_dir}")
    tables = build_tables(records)
    tables += [flip_histograms(records, sp) for sp in _splits(records) if sp != "train"]
    return write_bundle(tables + list(extra_tables), out_dir)
