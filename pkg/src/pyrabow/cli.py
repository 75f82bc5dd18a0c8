"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _native
from .config import ConfigError, PipelineConfig, load_config
from .dataset import (
    DatasetError,
    DatasetIndex,
    DecodeError,
    class_balance_report,
    load_grayscale,
    scan_dataset,
    stratified_split,
)
from .encoding import export_features_csv
from .evaluation import (
    CvReport,
    SweepGrid,
    confusion,
    cross_validate,
    holdout,
    roc_auc,
    roc_to_csv,
    sweep,
    sweep_to_csv,
    sweep_to_json,
)
from .features import _as_stored, extract_dense
from .pipeline import ArtifactCache, FittedPipeline, fit_codebook, fit_pipeline, grid_spec, load_descriptors
from .synthetic import make_grating_corpus

log = logging.getLogger("pyrabow")

MANIFEST_SCHEMA = 1


class RunContext:
    """State shared by the steps of one invocation."""

    def __init__(self, cfg: PipelineConfig, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.timings = {}
        self.results = {}
        self._index = None
        self._descriptors = None
        self.cache = ArtifactCache()

    @property
    def cache_dir(self) -> Path:
        env = os.environ.get("PYRABOW_CACHE_DIR")
        return Path(env) if env else self.out / "cache"

    @property
    def index(self) -> DatasetIndex:
        if self._index is None:
            if not self.cfg.dataset.root:
                raise ConfigError("dataset.root", "no dataset root given (config or --root)")
            self._index = scan_dataset(self.cfg.dataset.root)
        return self._index

    @property
    def descriptors(self):
        if self._descriptors is None:
            with self.timed("extract"):
                self._descriptors = load_descriptors(self.index, self.cfg, self.cache_dir, self.threads)
        return self._descriptors

    def timed(self, name):
        ctx = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                ctx.timings[name] = ctx.timings.get(name, 0.0) + time.perf_counter() - self.t0

        return _T()

    def split(self):
        train, test = stratified_split(self.index, self.cfg.dataset.train_fraction, self.cfg.dataset.split_seed)
        pos = {r.path: i for i, r in enumerate(self.index.records)}
        return ([pos[r.path] for r in train.records], [pos[r.path] for r in test.records])

    def write(self, rel: str, text: str):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_accuracy(ctx: RunContext, rep: CvReport):
    lines = ["protocol,fold,accuracy"]
    lines += [f"{rep.protocol},{i},{_fmt(a)}" for i, a in enumerate(rep.fold_accuracies)]
    lines += [f"{rep.protocol},mean,{_fmt(rep.mean)}", f"{rep.protocol},std,{_fmt(rep.std)}"]
    ctx.write(f"metrics/{rep.protocol}_accuracy.csv", "\n".join(lines) + "\n")


def _write_diagnostics(ctx: RunContext, truth, pred, scores, prefix: str):
    classes = ctx.index.classes
    cm = confusion(pred, truth, len(classes))
    ctx.write(f"metrics/{prefix}_confusion.csv", cm.to_csv(classes))
    curves = {}
    for c, name in enumerate(classes):
        if 0 < np.sum(truth == c) < len(truth):
            col = np.nan_to_num(scores[:, c], nan=-np.inf)
            curves[name] = roc_auc(col, truth, c)
    ctx.write(f"metrics/{prefix}_roc.csv", roc_to_csv(curves))
    return {name: auc for name, (_, auc) in curves.items()}


# ---------------------------------------------------------------- steps

def step_extract(ctx: RunContext):
    d = ctx.descriptors
    ctx.results["extract"] = {"images": len(d), "descriptors": int(sum(len(x) for x in d))}


def step_train_codebook(ctx: RunContext):
    train, _ = ctx.split()
    with ctx.timed("train-codebook"):
        cb = fit_codebook(ctx.cfg, [ctx.descriptors[i] for i in train])
    (ctx.out / "models").mkdir(parents=True, exist_ok=True)
    cb.save(ctx.out / "models" / "codebook.json")
    ctx.results["train-codebook"] = {"k": cb.k, "objective": cb.objective, "iterations": len(cb.history) - 1}


def _fit_on_train(ctx: RunContext) -> FittedPipeline:
    if "fitted" not in ctx.results:
        train, _ = ctx.split()
        labels = ctx.index.labels
        with ctx.timed("fit"):
            fitted = fit_pipeline(ctx.cfg, [ctx.descriptors[i] for i in train], labels[train],
                                  ctx.index.classes, cache=ctx.cache, train_key=("holdout", train))
        ctx.results["fitted"] = fitted
    return ctx.results["fitted"]


def step_encode(ctx: RunContext):
    fitted = _fit_on_train(ctx)
    with ctx.timed("encode"):
        X = fitted.encode(ctx.descriptors)
    p = ctx.out / "metrics" / "features.csv"
    p.parent.mkdir(parents=True, exist_ok=True)
    export_features_csv(p, X, ctx.index.labels, ctx.index.classes, ctx.cfg.encoding_tag)


def step_fit(ctx: RunContext):
    fitted = _fit_on_train(ctx)
    fitted.save(ctx.out / "models")


def step_evaluate(ctx: RunContext):
    fitted = ctx.results.get("fitted")
    if fitted is None:
        model_dir = ctx.out / "models"
        if not (model_dir / "pipeline.json").exists():
            fitted = _fit_on_train(ctx)
            fitted.save(model_dir)
        else:
            fitted = FittedPipeline.load(model_dir)
    _, test = ctx.split()
    truth = ctx.index.labels[test]
    with ctx.timed("evaluate"):
        pred, scores = fitted.predict([ctx.descriptors[i] for i in test])
    rep = CvReport([float(np.mean(pred == truth))], ctx.cfg.fingerprint(), "holdout")
    _write_accuracy(ctx, rep)
    aucs = _write_diagnostics(ctx, truth, pred, scores, "holdout")
    ctx.results["evaluate"] = {**rep.to_json(), "accuracy": rep.mean, "auc": aucs,
                               "test_size": len(test)}


def step_cv(ctx: RunContext):
    with ctx.timed("cv"):
        rep = cross_validate(ctx.cfg, ctx.index, descriptors=ctx.descriptors, cache=ctx.cache)
    _write_accuracy(ctx, rep)
    aucs = _write_diagnostics(ctx, ctx.index.labels, rep.predictions, rep.scores, "cv")
    ctx.results["cv"] = {**rep.to_json(), "auc": aucs}


def step_sweep(ctx: RunContext, grid: dict | None = None):
    axes = grid if grid is not None else ctx.cfg.sweep
    g = SweepGrid(axes)
    with ctx.timed("sweep"):
        rows = sweep(g, ctx.cfg, ctx.index, ctx.cfg.eval.protocol, ctx.cache_dir, ctx.threads, ctx.cache)
    ctx.write("metrics/sweep.csv", sweep_to_csv(rows, list(g.axes)))
    ctx.write("metrics/sweep.json", json.dumps(sweep_to_json(rows), indent=1, sort_keys=True))
    ctx.results["sweep"] = {"points": len(rows), "best": sweep_to_json(rows[:1])}


STEP_FUNCS = {
    "extract": step_extract,
    "train-codebook": step_train_codebook,
    "encode": step_encode,
    "fit": step_fit,
    "evaluate": step_evaluate,
    "cv": step_cv,
    "sweep": step_sweep,
}


def default_steps(cfg: PipelineConfig) -> list[str]:
    if cfg.steps:
        return list(cfg.steps)
    steps = ["extract"] + (["cv"] if cfg.eval.protocol == "cv" else ["fit", "evaluate"])
    if cfg.sweep:
        steps.append("sweep")
    return steps


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(ctx: RunContext, command: str, steps):
    files = {}
    for sub in ("models", "metrics"):
        d = ctx.out / sub
        if d.exists():
            for p in sorted(d.rglob("*")):
                if p.is_file():
                    files[str(p.relative_to(ctx.out))] = _sha256(p)
    results = {k: v for k, v in ctx.results.items() if k != "fitted"}
    index = ctx._index
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "pyrabow_version": __version__,
        "command": command,
        "steps": list(steps),
        "config": ctx.cfg.to_dict(),
        "config_fingerprint": ctx.cfg.fingerprint(),
        "dataset": None if index is None else {
            "root": index.root, "classes": list(index.classes), "counts": index.counts},
        "feature_layout": {
            "encoding": ctx.cfg.encoding_tag,
            "pyramid_shape": ctx.cfg.encoding.shape,
            "pyramid_level": ctx.cfg.encoding.level,
            "regions": ctx.cfg.num_regions,
            "encoded_dim": ctx.cfg.feature_dim,
            "final_dim": ctx.cfg.pca.num_components if ctx.cfg.pca.enabled else ctx.cfg.feature_dim,
        },
        "results": results,
        "files": files,
        "timings_seconds": {k: round(v, 4) for k, v in ctx.timings.items()},
        "backend": _native.BACKEND,
        "threads": ctx.threads,
    }
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def execute(cfg: PipelineConfig, out, steps, threads: int = 1, command: str = "run", sweep_grid=None):
    """Run ``steps`` in order and write the manifest; returns the context."""
    ctx = RunContext(cfg, Path(out), threads)
    ctx.out.mkdir(parents=True, exist_ok=True)
    for s in steps:
        log.info("step %s", s)
        if s == "sweep":
            step_sweep(ctx, sweep_grid)
        else:
            STEP_FUNCS[s](ctx)
    write_manifest(ctx, command, steps)
    return ctx


# ---------------------------------------------------------------- commands

def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "root", None):
        cfg = cfg.with_overrides({"dataset.root": args.root})
    return cfg


def cmd_scan(args):
    index = scan_dataset(args.root)
    if args.out:
        index.save(args.out)
    train, test = stratified_split(index, args.train_fraction, args.seed)
    print(f"{len(index.classes)} classes, {len(index)} images")
    print(class_balance_report(train, test))
    return 0


def cmd_synth(args):
    make_grating_corpus(args.out, per_class=args.per_class, size=args.size, noise=args.noise, seed=args.seed)
    print(f"wrote synthetic corpus to {args.out}")
    return 0


def _step_command(step):
    def run(args):
        cfg = _config_from_args(args)
        grid = None
        if step == "sweep" and args.grid:
            grid = json.loads(Path(args.grid).read_text())
        steps = ["extract", step] if step != "extract" else ["extract"]
        ctx = execute(cfg, args.out, steps, args.threads, command=step, sweep_grid=grid)
        _print_summary(ctx, step)
        return 0
    return run


def _print_summary(ctx: RunContext, step: str):
    res = ctx.results.get(step)
    if isinstance(res, dict):
        print(json.dumps(res, sort_keys=True, default=_json_default))
    print(f"outputs in {ctx.out}")


def cmd_run(args):
    cfg = load_config(args.config)
    if args.root:
        cfg = cfg.with_overrides({"dataset.root": args.root})
    steps = default_steps(cfg)
    ctx = execute(cfg, args.out, steps, args.threads, command="run")
    for s in steps:
        if s in ("evaluate", "cv"):
            _print_summary(ctx, s)
    return 0


def cmd_predict(args):
    model_dir = Path(args.model_dir)
    if (model_dir / "models" / "pipeline.json").exists():
        model_dir = model_dir / "models"
    if not (model_dir / "pipeline.json").exists():
        raise FileNotFoundError(f"no pipeline.json under {args.model_dir}")
    fitted = FittedPipeline.load(model_dir)
    desc = _as_stored(extract_dense(load_grayscale(args.image), grid_spec(fitted.config)))
    labels, scores = fitted.predict([desc])
    row = [None if not math.isfinite(s) else float(s) for s in scores[0]]
    print(json.dumps({"class": fitted.classes[int(labels[0])], "class_id": int(labels[0]),
                      "classes": fitted.classes, "scores": row}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pyrabow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pyrabow {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for descriptor extraction (default: all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="index a class-per-directory corpus and report class balance")
    s.add_argument("root")
    s.add_argument("--out", help="write the dataset index JSON here")
    s.add_argument("--train-fraction", type=float, default=0.7)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("synth", help="generate the synthetic grating corpus")
    s.add_argument("out")
    s.add_argument("--per-class", type=int, default=60)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    helps = {
        "extract": "extract dense descriptors into the binary cache",
        "train-codebook": "train the visual-word codebook on the training split",
        "encode": "fit on the training split and export encoded features as CSV",
        "fit": "fit the whole pipeline on the training split and save models",
        "evaluate": "evaluate saved (or freshly fitted) models on the test split",
        "cv": "stratified k-fold cross-validation",
        "sweep": "evaluate a grid of configurations",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
        s.add_argument("--root", help="dataset root, overrides dataset.root")
        s.add_argument("--out", default="pyrabow-out", help="output directory")
        if name == "sweep":
            s.add_argument("--grid", help="JSON object of dotted config paths to value lists")
        s.set_defaults(func=_step_command(name))

    s = sub.add_parser("run", help="run the pipeline described by a config file")
    s.add_argument("config")
    s.add_argument("--root", help="dataset root, overrides dataset.root")
    s.add_argument("--out", default="pyrabow-out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("predict", help="classify one image with a saved pipeline")
    s.add_argument("model_dir")
    s.add_argument("image")
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DecodeError, DatasetError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
