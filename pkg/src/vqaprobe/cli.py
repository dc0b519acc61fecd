"""Command line entry point: generate, morph, train, eval, report, reproduce, config.

Exit status: 0 on success, 2 on usage or configuration errors, 1 on runtime failures.
Environment overrides: VQAPROBE_SEED (generator and run seed) and
VQAPROBE_OUT (output directory); explicit flags win over both.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__, synthgen
from .exceptions import ConfigError, GenerationError, VQAProbeError
from .fileio import atomic_open, atomic_write_text
from .metrics import write_records
from .perturb import VariantKind, morph
from .preprocessing import INPUT_MODES
from .question import QTypeLexicon, question_records, read_questions
from .reporting import encoding_stats, encoding_table, report
from .trainer import MatrixConfig, RunConfig, TrainedRun, cell_records_name, evaluate, run_matrix, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("vqaprobe")

ENV_SEED = "VQAPROBE_SEED"
ENV_OUT = "VQAPROBE_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
BUNDLE_DATA = "data"


# ---------------------------------------------------------------- config files

def load_config(path) -> dict:
    """TOML, or JSON when the file ends in .json."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    try:
        return json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e


def bundled_recipe(name: str) -> Path | None:
    ref = resources.files("vqaprobe") / "recipes" / name
    return Path(str(ref)) if ref.is_file() else None


def resolve_recipe(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    for cand in (arg, f"{arg}.toml"):
        found = bundled_recipe(cand)
        if found is not None:
            return found
    raise ConfigError(f"no recipe {arg!r} (not a file, not a bundled recipe)")


def env_seed() -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw in (None, ""):
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_SEED}={raw!r} is not an integer") from None


def pick(flag, env, cfg):
    """First of flag, environment, config that is set."""
    for v in (flag, env, cfg):
        if v is not None:
            return v
    return None


@dataclass
class ExperimentRecipe:
    name: str
    generator: dict
    matrix: dict
    report: dict = field(default_factory=dict)
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecipe":
        if "generator" not in d:
            raise ConfigError("recipe has no [generator] section")
        if "matrix" not in d:
            raise ConfigError("recipe has no [matrix] section")
        unknown = set(d) - {"name", "generator", "matrix", "report", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown recipe keys: {sorted(unknown)}")
        rec = cls(d.get("name", "recipe"), dict(d["generator"]), dict(d["matrix"]),
                  dict(d.get("report", {})), d.get("output_dir"))
        _bias_config(rec.generator)
        for cfg in MatrixConfig.from_dict(rec.matrix).expand():
            cfg.validate()
        return rec

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- commands

def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _generator_config(args) -> synthgen.BiasConfig:
    d = {}
    if args.config:
        doc = load_config(args.config)
        d = dict(doc.get("generator", doc))
    seed = pick(args.seed, env_seed(), d.get("seed"))
    if seed is not None:
        d["seed"] = seed
    return _bias_config(d)


def _bias_config(d: dict) -> synthgen.BiasConfig:
    try:
        return synthgen.BiasConfig.from_dict(d)
    except (GenerationError, TypeError) as e:
        raise ConfigError(f"generator config: {e}") from e


def _out_dir(flag, cfg_value=None, what="--out") -> Path:
    out = pick(flag, os.environ.get(ENV_OUT) or None, cfg_value)
    if out is None:
        raise ConfigError(f"no output location: pass {what} or set {ENV_OUT}")
    return Path(out)


def cmd_generate(args) -> int:
    cfg = _generator_config(args)
    out = _out_dir(args.out)
    ds = synthgen.generate(cfg)
    synthgen.save(ds, out)
    for name, sp in ds.splits.items():
        log.info("split=%s n=%d", name, len(sp))
    table = synthgen.majority_baseline(ds["train"])
    for name in ("test_id", "test_ood"):
        log.info("majority_baseline split=%s acc=%.2f", name, synthgen.majority_accuracy(table, ds[name]))
    return EXIT_OK


def cmd_morph(args) -> int:
    lex = synthgen.lexicon() if args.lexicon == "synthetic" else (
        QTypeLexicon.vqa() if args.lexicon == "vqa" else QTypeLexicon.from_file(args.lexicon))
    try:
        qs = read_questions(args.inp, lex)
    except OSError as e:
        raise ConfigError(f"cannot read {args.inp}: {e.strerror}") from e
    kind = VariantKind.parse(str(args.variant))
    seed = pick(args.seed, env_seed(), 0)
    toks = morph(qs, kind, seed)
    with atomic_open(args.out) as f:
        for rec in question_records(qs, toks):
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    log.info("morph variant=%s seed=%d n=%d out=%s", kind.value, seed, len(qs), args.out)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    d = load_config(args.config) if args.config else {}
    d = dict(d.get("run", d))
    for key, val in (("train_input", args.mode), ("epochs", args.epochs), ("model_mode", args.model_mode),
                     ("name", args.name)):
        if val is not None:
            d[key] = val
    if args.debias is not None:
        d["debias"] = {**d.get("debias", {}), "method": args.debias}
    seed = pick(args.seed, env_seed(), d.get("seed"))
    if seed is not None:
        d["seed"] = seed
    d["data_dir"] = str(args.data)
    return RunConfig.from_dict(d).validate()


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args.out)
    ckpt = out / f"{cfg.name}.json" if out.suffix != ".json" else out
    t0 = time.perf_counter()
    run = train(cfg, checkpoint=ckpt)
    log.info("run=%s final_loss=%.6f seconds=%.2f checkpoint=%s", cfg.name, run.loss_log[-1] if run.loss_log else float("nan"),
             time.perf_counter() - t0, ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    run = TrainedRun.load(args.checkpoint)
    data_dir = Path(args.data or run.config.data_dir or "")
    if not args.data and not data_dir.is_absolute() and not data_dir.exists():
        # checkpoints written by `reproduce` live in <bundle>/checkpoints
        data_dir = Path(args.checkpoint).resolve().parent.parent / data_dir
    if not (data_dir / f"{args.split}_questions.jsonl").exists():
        raise ConfigError(f"no {args.split} split under {data_dir}")
    split = synthgen.load_split(data_dir, args.split)
    eval_input = args.eval_input or run.config.eval_input
    records = evaluate(run, split, eval_input)
    out = _out_dir(args.out)
    path = out if out.suffix == ".jsonl" else out / cell_records_name(run.config.name, eval_input, args.split)
    write_records(path, records)
    acc = sum(r.correct for r in records) / len(records) * 100
    log.info("run=%s eval_input=%s split=%s n=%d acc=%.2f out=%s", run.config.name, eval_input, args.split,
             len(records), acc, path)
    return EXIT_OK


def cmd_report(args) -> int:
    paths = report(args.predictions, _out_dir(args.out))
    for p in paths:
        log.info("wrote=%s", p)
    return EXIT_OK


def reproduce(recipe: ExperimentRecipe, out: Path, jobs: int = 1, seed: int | None = None) -> dict:
    """generate -> train matrix -> evaluate -> report.  Returns the manifest."""
    t_start = time.perf_counter()
    gen = dict(recipe.generator)
    if seed is not None:
        gen["seed"] = seed
    timings = {}

    t0 = time.perf_counter()
    ds = synthgen.generate(synthgen.BiasConfig.from_dict(gen))
    data_dir = out / BUNDLE_DATA
    synthgen.save(ds, data_dir)
    ds = synthgen.load(data_dir)            # train on exactly what was written
    timings["generate"] = time.perf_counter() - t0

    mat = dict(recipe.matrix)
    # bundle-relative, so the bundle's bytes do not depend on where it lives
    mat["base"] = {**mat.get("base", {}), "data_dir": BUNDLE_DATA}
    t0 = time.perf_counter()
    result = run_matrix(MatrixConfig.from_dict(mat), ds, out, jobs=jobs)
    timings["matrix"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    extra = []
    if recipe.report.get("encodings", True):
        stats = {}
        for cell in result["cells"]:
            if cell["status"] != "ok":
                continue
            run = TrainedRun.load(out / "checkpoints" / f"{cell['name']}.json")
            for sp in recipe.matrix.get("splits", ["test_id", "test_ood"]):
                stats[(cell["name"], sp)] = encoding_stats(run, ds[sp])
        extra.append(encoding_table(stats))
    report_paths = report(out / "predictions", out / "reports", extra) if result["records"] else []
    timings["report"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start

    manifest = {
        "recipe": recipe.name,
        "recipe_hash": recipe.digest(),
        "generator_seed": gen.get("seed", synthgen.BiasConfig().seed),
        "version": __version__,
        "cells": result["cells"],
        "reports": sorted(str(p.relative_to(out)) for p in report_paths),
        "seconds": {k: round(v, 3) for k, v in timings.items()},
        "status": "ok" if all(c["status"] == "ok" for c in result["cells"]) else "failed",
    }
    _write_json(out / "recipe.json", asdict(recipe))
    _write_json(out / "manifest.json", manifest)
    return manifest


def cmd_reproduce(args) -> int:
    path = resolve_recipe(args.recipe)
    recipe = ExperimentRecipe.from_dict(load_config(path))
    out = _out_dir(args.out, recipe.output_dir)
    seed = pick(args.seed, env_seed(), None)
    log.info("reproduce recipe=%s hash=%s out=%s jobs=%d", recipe.name, recipe.digest(), out, args.jobs)
    manifest = reproduce(recipe, out, jobs=args.jobs, seed=seed)
    for c in manifest["cells"]:
        log.info("cell=%s status=%s seconds=%.2f", c["name"], c["status"], c["seconds"])
    log.info("reproduce status=%s seconds=%.2f", manifest["status"], manifest["seconds"]["total"])
    return EXIT_OK if manifest["status"] == "ok" else EXIT_FAIL


def defaults() -> dict:
    return {
        "generator": synthgen.BiasConfig().to_dict(),
        "run": RunConfig().to_dict(),
        "matrix": asdict(MatrixConfig()),
        "report": {"encodings": True},
        "environment": {ENV_SEED: "overrides generator/run seed", ENV_OUT: "overrides output directory"},
    }


def cmd_config(args) -> int:
    if args.recipe:
        doc = asdict(ExperimentRecipe.from_dict(load_config(resolve_recipe(args.recipe))))
    else:
        doc = defaults()
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="vqaprobe", description=__doc__.split("\n")[0], formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("generate", help="write a synthetic biased benchmark", formatter_class=fmt)
    g.add_argument("--config", help="TOML/JSON generator config (flat or under [generator])")
    g.add_argument("--seed", type=int, help=f"generator seed (else ${ENV_SEED}, else config, else 0)")
    g.add_argument("--out", help=f"output directory (else ${ENV_OUT})")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("morph", help="rewrite a questions JSONL file as variant questions", formatter_class=fmt)
    m.add_argument("--variant", required=True, choices=["1", "2", "3"])
    m.add_argument("--seed", type=int, help="shuffle seed for variant 2 (else $VQAPROBE_SEED, else 0)")
    m.add_argument("--in", dest="inp", required=True, help="questions JSONL")
    m.add_argument("--out", required=True, help="output JSONL; question_id preserved")
    m.add_argument("--lexicon", default="vqa", help="'vqa', 'synthetic', or a TSV of phrase<TAB>answer_type")
    m.set_defaults(func=cmd_morph)

    t = sub.add_parser("train", help="train one model and write its checkpoint", formatter_class=fmt)
    t.add_argument("--data", required=True, help="benchmark directory written by `generate`")
    t.add_argument("--config", help="TOML/JSON run config (flat or under [run])")
    t.add_argument("--mode", choices=INPUT_MODES, help="training input rendering (config default: question)")
    t.add_argument("--model-mode", choices=["full", "q_only"])
    t.add_argument("--debias", choices=["none", "mixing", "contrastive"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--name", help="run name (checkpoint file stem)")
    t.add_argument("--out", help=f"checkpoint file (.json) or directory (else ${ENV_OUT})")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="dump predictions of a checkpoint on one split", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="benchmark directory (default: the one the model was trained on)")
    e.add_argument("--split", default="test_ood", choices=list(synthgen.SPLITS))
    e.add_argument("--eval-input", choices=INPUT_MODES, help="question rendering (default: the run's eval_input)")
    e.add_argument("--out", help=f"predictions file (.jsonl) or directory (else ${ENV_OUT})")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="tables and CSVs from a directory of prediction dumps", formatter_class=fmt)
    r.add_argument("--predictions", required=True, help="directory of <cell>__<eval_input>__<split>.jsonl dumps")
    r.add_argument("--out", help=f"report directory (else ${ENV_OUT})")
    r.set_defaults(func=cmd_report)

    rp = sub.add_parser("reproduce", help="run a full recipe: generate, train matrix, evaluate, report",
                        formatter_class=fmt)
    rp.add_argument("recipe", help="recipe file, or the name of a bundled recipe (e.g. paperlike)")
    rp.add_argument("--out", help=f"bundle directory (else ${ENV_OUT}, else the recipe's output_dir)")
    rp.add_argument("--seed", type=int, help="override the generator seed")
    rp.add_argument("--jobs", type=int, default=1, help="matrix cells trained concurrently")
    rp.set_defaults(func=cmd_reproduce)

    c = sub.add_parser("config", help="configuration utilities", formatter_class=fmt)
    csub = c.add_subparsers(dest="action", required=True, metavar="ACTION")
    cs = csub.add_parser("show", help="print every default (or a resolved recipe) as JSON", formatter_class=fmt)
    cs.add_argument("--recipe", help="recipe file or bundled recipe name")
    cs.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="level=%(levelname)s logger=%(name)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (VQAProbeError, OSError, ValueError) as e:
        log.error("status=failed error=%r", e)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
