"""Command-line entry point: ``deepseed <command> [--config FILE] [--key value ...]``.

Commands: synth, preprocess, train, evaluate, sweep, report.  Every config
key can be set in the YAML config file or overridden by a flag of the same
name (dashes or underscores).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import plotting, synthetic
from .autoencoder import save_model
from .clustering import SeedingError
from .config import RunConfig, TrainConfig, dump_config, load_config
from .evaluation import (
    EvaluationReport,
    SweepTable,
    aggregate,
    default_jobs,
    run_cv,
    sensitivity_sweep,
    write_aggregate_csv,
    write_quartiles_csv,
)
from .signals import (
    CACHE_FORMAT,
    DataError,
    EmptyWindowSetError,
    ingest_e4_csv,
    load_cache,
    make_windows,
    preprocess,
    save_cache,
)
from .tensor import TENSOR_FORMAT
from .trainer import NumericalError, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("deepseed")

FORMATS = {"cache": CACHE_FORMAT, "tensors": TENSOR_FORMAT, "report": "deepseed-report/1",
           "sweep": "deepseed-sweep/1", "config": "deepseed-config/1"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _opt_int(text: str) -> int | None:
    return None if text.lower() in ("none", "") else int(text)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of key: value settings")
    groups = ((RunConfig, p.add_argument_group("run settings")),
              (TrainConfig, p.add_argument_group("training settings")))
    for cls, group in groups:
        for f in fields(cls):
            if f.name == "train":
                continue
            kind = {"int": int, "float": float, "str": str, "int | None": _opt_int,
                    "str | None": str, "list[int]": _int_list}.get(str(f.type), str)
            group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepseed", description="Deep-seeded clustering of wearable physiological signals.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic E4-style dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--duration", type=float, default=60.0, help="seconds per regime")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    for name, text in (("preprocess", "smooth, resample, scale and window every subject"),
                       ("train", "train one model per subject on all of its windows"),
                       ("evaluate", "within-subject cross-validation from the caches"),
                       ("sweep", "sequence-length and embedding-size sensitivity sweep")):
        _add_config_flags(sub.add_parser(name, help=text))

    p = sub.add_parser("report", help="re-emit CSV tables and figures from a run directory")
    p.add_argument("run_dir")
    return parser


# -- run directory ---------------------------------------------------------------------

class Run:
    """Timestamped output directory holding the resolved config, a JSON-lines log and artifacts."""

    def __init__(self, cfg: RunConfig, command: str):
        name = cfg.run_name or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
        self.dir = Path(cfg.output_dir) / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        dump_config(cfg, self.dir / "config.yaml")
        (self.dir / "manifest.json").write_text(json.dumps(
            {"command": command, "formats": FORMATS, "config_fingerprint": cfg.fingerprint()},
            sort_keys=True, indent=1))
        self._log = (self.dir / "run.log.jsonl").open("w")

    def event(self, kind: str, **payload) -> None:
        self._log.write(json.dumps({"event": kind, **payload}, sort_keys=True, default=str) + "\n")
        self._log.flush()

    def close(self) -> None:
        self._log.close()


def _subject_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    return sorted(d for d in root.iterdir() if d.is_dir())


def _caches(cfg: RunConfig) -> list[Path]:
    cache_dir = cfg.resolved_cache_dir
    paths = sorted(cache_dir.glob("*.json")) if cache_dir.is_dir() else []
    if not paths:
        raise DataError(f"no preprocessed caches in {cache_dir}; run `deepseed preprocess` first")
    return paths


# -- commands ----------------------------------------------------------------------------

def cmd_synth(args) -> int:
    paths = synthetic.write_dataset(args.out, args.subjects, args.duration, args.classes, args.noise,
                                    args.separation, args.repeats, args.seed)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_preprocess(cfg: RunConfig, run: Run) -> int:
    if not cfg.dataset_root:
        raise UsageError("preprocess needs --dataset-root")
    cache_dir = cfg.resolved_cache_dir
    cache_dir.mkdir(parents=True, exist_ok=True)
    summary, errors = {}, {}
    for d in _subject_dirs(Path(cfg.dataset_root)):
        try:
            session = ingest_e4_csv(d, cfg.seeding_mode)
            prepared = preprocess(session, cfg.sg_window)
            windows = make_windows(prepared, cfg.train.delta)
        except DataError as exc:
            errors[d.name] = f"{type(exc).__name__}: {exc}"
            run.event("ingest_error", subject=d.name, error=errors[d.name])
            print(f"{d.name}: {errors[d.name]}", file=sys.stderr)
            continue
        save_cache(prepared, windows, cache_dir / f"{prepared.subject_id}.json")
        counts = {c: int((windows.labels == i).sum()) for i, c in enumerate(windows.classes)}
        summary[prepared.subject_id] = {"windows": len(windows), "per_class": counts,
                                        "samples": int(prepared.data.shape[0])}
        run.event("preprocessed", subject=prepared.subject_id, **summary[prepared.subject_id])
    (run.dir / "preprocess_summary.json").write_text(
        json.dumps({"cache_dir": str(cache_dir), "delta": cfg.train.delta, "subjects": summary,
                    "errors": errors}, sort_keys=True, indent=1))
    for sid, info in summary.items():
        print(f"{sid}: {info['windows']} windows {info['per_class']}")
    if not summary:
        print("no session could be preprocessed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _load_windows(path: Path, delta: int):
    session, cached = load_cache(path)
    windows = cached if cached.delta == delta else make_windows(session, delta)
    return session, windows


def cmd_train(cfg: RunConfig, run: Run) -> int:
    tcfg = cfg.train
    for path in _caches(cfg):
        _, windows = _load_windows(path, tcfg.delta)
        idx = np.arange(len(windows))[::tcfg.effective_downsample]
        out = run.dir / "models" / windows.subject_id
        out.mkdir(parents=True, exist_ok=True)
        with (out / "log.jsonl").open("w") as fh:
            trained = fit(windows.windows(idx), windows.labels[idx], tcfg, len(windows.classes),
                          on_epoch=lambda rec: fh.write(json.dumps(rec, sort_keys=True) + "\n"))
        save_model(trained.model, out / "model.json", {"config_fingerprint": trained.config_fingerprint})
        trained.clusters.save(out / "clusters.json")
        plotting.loss_curves(trained.history, out / "loss.png", windows.subject_id)
        run.event("trained", subject=windows.subject_id, windows=int(idx.size),
                  final_loss=trained.history[-1]["loss"] if trained.history else None)
        print(f"{windows.subject_id}: trained on {idx.size} windows -> {out}")
    return EXIT_OK


def write_reports(reports: list[EvaluationReport], out: Path) -> dict:
    """CSV/JSON tables plus figures for a list of per-subject reports."""
    out.mkdir(parents=True, exist_ok=True)
    subj_dir = out / "subjects"
    subj_dir.mkdir(exist_ok=True)
    for r in reports:
        r.write_json(subj_dir / f"{r.subject_id}.json")
        if r.folds:
            r.write_confusion_csv(subj_dir / f"{r.subject_id}_confusion.csv")
            r.write_folds_csv(subj_dir / f"{r.subject_id}_folds.csv")
            plotting.confusion(r.confusion(), r.classes, subj_dir / f"{r.subject_id}_confusion.png", r.subject_id)
            plotting.loss_curves(r.folds[0].history, subj_dir / f"{r.subject_id}_loss_fold0.png",
                                 f"{r.subject_id} fold 0")
    agg = aggregate(reports)
    write_aggregate_csv(reports, out / "aggregate.csv")
    write_quartiles_csv(reports, out / "accuracy_quartiles.csv")
    (out / "aggregate.json").write_text(json.dumps(agg, sort_keys=True, indent=1))
    done = [r for r in reports if r.folds]
    if done:
        classes = done[0].classes
        same = [r for r in done if r.classes == classes]
        # average of per-subject row-normalized matrices, as in subject-averaged confusion plots
        mats = [r.confusion() / np.maximum(r.confusion().sum(axis=1, keepdims=True), 1) for r in same]
        plotting.confusion(np.mean(mats, axis=0), classes, out / "confusion_mean.png", "mean over subjects")
        plotting.accuracy_boxes(done, out / "accuracy.png")
        plotting.silhouettes(done, out / "silhouette.png")
    return agg


def cmd_evaluate(cfg: RunConfig, run: Run) -> int:
    tcfg = cfg.train
    jobs = cfg.jobs or default_jobs()
    reports = []
    for path in _caches(cfg):
        _, windows = _load_windows(path, tcfg.delta)
        report = run_cv(windows, tcfg, jobs, checkpoint_dir=run.dir / "checkpoints")
        reports.append(report)
        s = report.summary()
        run.event("evaluated", subject=report.subject_id, folds=len(report.folds),
                  failures=report.failures, summary=s)
        print(f"{report.subject_id}: test accuracy {s.get('test_accuracy_mean', float('nan')):.3f} "
              f"(train {s.get('train_accuracy_mean', float('nan')):.3f}) over {len(report.folds)} folds")
    agg = write_reports(reports, run.dir)
    print(f"aggregate test accuracy {agg['test_accuracy']}")
    if not any(r.folds for r in reports):
        return EXIT_NUMERIC if any("NumericalError" in str(r.failures) for r in reports) else EXIT_DATA
    return EXIT_OK


def write_sweep(delta_table: SweepTable, dim_table: SweepTable, out: Path) -> None:
    delta_table.write_csv(out / "sweep_delta.csv")
    dim_table.write_csv(out / "sweep_embedding.csv")
    delta_table.write_long_csv(out / "sweep_delta_long.csv")
    dim_table.write_long_csv(out / "sweep_embedding_long.csv")
    (out / "sweep.json").write_text(json.dumps(
        {"format": FORMATS["sweep"], "delta": delta_table.to_dict(), "embedding_dim": dim_table.to_dict()},
        sort_keys=True, indent=1))
    plotting.sweep(delta_table, out / "sweep_delta.png")
    plotting.sweep(dim_table, out / "sweep_embedding.png")


def cmd_sweep(cfg: RunConfig, run: Run) -> int:
    sessions = [load_cache(p)[0] for p in _caches(cfg)]
    jobs = cfg.jobs or default_jobs()
    dt, et, reports = sensitivity_sweep(sessions, cfg.train, cfg.sweep_deltas, cfg.sweep_dims, jobs,
                                        fixed_delta=cfg.train.delta, fixed_dim=cfg.train.embedding_dim,
                                        progress=lambda msg: (print(msg), run.event("sweep_point", info=msg)))
    write_sweep(dt, et, run.dir)
    rep_dir = run.dir / "reports"
    rep_dir.mkdir(exist_ok=True)
    for (sid, delta, dim), r in sorted(reports.items()):
        r.write_json(rep_dir / f"{sid}_delta{delta}_emb{dim}.json")
    for t in (dt, et):
        print(f"{t.parameter}: setting means {t.setting_means()} best-of-grid mean {t.best_mean()}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    subj = sorted((run_dir / "subjects").glob("*.json"))
    sweep_file = run_dir / "sweep.json"
    if not subj and not sweep_file.is_file():
        raise DataError(f"{run_dir} holds neither subject reports nor a sweep")
    if subj:
        reports = [EvaluationReport.from_dict(json.loads(p.read_text())) for p in subj]
        agg = write_reports(reports, run_dir)
        print(f"aggregate test accuracy {agg['test_accuracy']}")
    if sweep_file.is_file():
        doc = json.loads(sweep_file.read_text())
        tables = []
        for key in ("delta", "embedding_dim"):
            t = doc[key]
            acc = {s: {int(k): v for k, v in row.items()} for s, row in t["accuracy"].items()}
            tables.append(SweepTable(t["parameter"], t["settings"], t["subjects"], acc, t["notes"]))
        write_sweep(tables[0], tables[1], run_dir)
        print(f"sweep tables rewritten in {run_dir}")
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "report":
            return cmd_report(args)
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
        try:
            cfg = load_config(args.config, overrides)
        except (ValueError, TypeError, OSError) as exc:
            raise UsageError(str(exc)) from exc
        run = Run(cfg, args.command)
        try:
            run.event("start", command=args.command, config=cfg.to_dict())
            code = COMMANDS[args.command](cfg, run)
            run.event("end", exit_code=code)
            print(f"run directory: {run.dir}")
            return code
        finally:
            run.close()
    except UsageError as exc:
        print(f"deepseed: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyWindowSetError, SeedingError) as exc:
        print(f"deepseed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"deepseed: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
