"""Within-subject k-fold cross-validation, metrics and sensitivity sweeps."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autoencoder import save_model
from .clustering import SeedingError, silhouette
from .config import NON_SEQUENTIAL, SEQUENTIAL, TrainConfig
from .signals import EmptyWindowSetError, PreparedSession, WindowSet, make_windows
from .trainer import NumericalError, TrainedModel, fit, predict

log = logging.getLogger(__name__)

REPORT_FORMAT = "deepseed-report/1"
SWEEP_FORMAT = "deepseed-sweep/1"


@dataclass
class FoldPlan:
    mode: str
    fold_count: int
    test: list[np.ndarray]
    train: list[np.ndarray]
    downsample_factor: int = 1
    skipped: dict[int, str] = field(default_factory=dict)

    def active_folds(self) -> list[int]:
        return [i for i in range(self.fold_count) if i not in self.skipped]


def make_folds(window_count: int, mode: str = NON_SEQUENTIAL, fold_count: int = 10,
               downsample_factor: int = 1, rng_seed: int = 0, labels: np.ndarray | None = None) -> FoldPlan:
    """Partition window indices into test folds; thin each training complement by ``downsample_factor``.

    Sequential folds are contiguous blocks in time order; non-sequential folds
    come from a seeded shuffle.  With ``labels``, folds whose thinned training
    set loses a class are marked skipped.
    """
    if window_count < fold_count:
        raise ValueError(f"{window_count} windows cannot fill {fold_count} folds")
    if downsample_factor < 1:
        raise ValueError("downsample_factor must be >= 1")
    idx = np.arange(window_count)
    if mode == SEQUENTIAL:
        tests = np.array_split(idx, fold_count)
    elif mode == NON_SEQUENTIAL:
        perm = np.random.default_rng(rng_seed).permutation(window_count)
        tests = [np.sort(part) for part in np.array_split(perm, fold_count)]
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    trains, skipped = [], {}
    n_classes = None if labels is None else np.unique(labels).size
    for i, test in enumerate(tests):
        mask = np.ones(window_count, dtype=bool)
        mask[test] = False
        train = idx[mask][::downsample_factor]
        trains.append(train)
        if labels is not None:
            have = np.unique(labels[train]).size
            if have < n_classes:
                reason = f"fold {i}: training set keeps {have} of {n_classes} classes after downsampling by {downsample_factor}"
                log.warning(reason)
                skipped[i] = reason
    return FoldPlan(mode, fold_count, [t.astype(np.int64) for t in tests], trains, downsample_factor, skipped)


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def metrics(confusion) -> dict:
    cm = np.asarray(confusion)
    if cm.size == 0 or cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    n = cm.sum()
    if n == 0:
        raise ValueError("confusion matrix is all zeros")
    tp = np.diag(cm).astype(np.float64)
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    flagged = sorted({int(k) for k in np.flatnonzero(col == 0)} | {int(k) for k in np.flatnonzero(row == 0)})
    return {
        "accuracy": float(tp.sum() / n),
        "precision_macro": float(precision.mean()),
        "recall_macro": float(recall.mean()),
        # micro averages reduce to accuracy for single-label multi-class data
        "precision_micro": float(tp.sum() / col.sum()),
        "recall_micro": float(tp.sum() / row.sum()),
        "precision_per_class": precision.tolist(),
        "recall_per_class": recall.tolist(),
        "zero_denominator_classes": flagged,
    }


@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    test: dict
    train: dict
    confusion: list[list[int]]
    train_confusion: list[list[int]]
    silhouette: float | None
    history: list[dict]


@dataclass
class EvaluationReport:
    subject_id: str
    mode: str
    classes: list[str]
    folds: list[FoldResult]
    failures: dict[int, str]
    config_fingerprint: str
    delta: int = 0
    embedding_dim: int = 0

    def _values(self, split: str, key: str) -> np.ndarray:
        return np.array([getattr(f, split)[key] for f in self.folds], dtype=np.float64)

    def summary(self) -> dict:
        out = {}
        if not self.folds:
            return out
        for split in ("test", "train"):
            for key in ("accuracy", "precision_macro", "recall_macro"):
                v = self._values(split, key)
                out[f"{split}_{key}_mean"] = float(v.mean())
                out[f"{split}_{key}_median"] = float(np.median(v))
        sil = [f.silhouette for f in self.folds if f.silhouette is not None]
        out["silhouette_mean"] = float(np.mean(sil)) if sil else None
        out["silhouette_median"] = float(np.median(sil)) if sil else None
        return out

    @property
    def mean_accuracy(self) -> float:
        return float(self._values("test", "accuracy").mean()) if self.folds else float("nan")

    def confusion(self) -> np.ndarray:
        return np.sum([np.array(f.confusion) for f in self.folds], axis=0)

    def quartiles(self, split: str = "test") -> dict:
        v = self._values(split, "accuracy")
        q = np.percentile(v, [0, 25, 50, 75, 100]) if v.size else [np.nan] * 5
        return dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "subject_id": self.subject_id,
            "mode": self.mode,
            "classes": self.classes,
            "delta": self.delta,
            "embedding_dim": self.embedding_dim,
            "config_fingerprint": self.config_fingerprint,
            "folds": [asdict(f) for f in self.folds],
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "summary": self.summary(),
            "confusion": self.confusion().tolist() if self.folds else [],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"unsupported report format {doc.get('format')!r}")
        folds = [FoldResult(**f) for f in doc["folds"]]
        return cls(doc["subject_id"], doc["mode"], doc["classes"], folds,
                   {int(k): v for k, v in doc["failures"].items()}, doc["config_fingerprint"],
                   doc.get("delta", 0), doc.get("embedding_dim", 0))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    def write_confusion_csv(self, path: str | Path) -> None:
        cm = self.confusion()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["truth\\predicted", *self.classes])
            for name, row in zip(self.classes, cm):
                w.writerow([name, *row.tolist()])

    def write_folds_csv(self, path: str | Path) -> None:
        keys = ("accuracy", "precision_macro", "recall_macro")
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "n_train", "n_test", *(f"test_{k}" for k in keys),
                        *(f"train_{k}" for k in keys), "silhouette"])
            for f in self.folds:
                w.writerow([f.fold, f.n_train, f.n_test, *(f.test[k] for k in keys),
                            *(f.train[k] for k in keys), "" if f.silhouette is None else f.silhouette])


# -- cross-validation ---------------------------------------------------------------

def run_fold(windows: WindowSet, train_idx: np.ndarray, test_idx: np.ndarray, fold: int,
             config: TrainConfig, checkpoint_dir: str | Path | None = None) -> FoldResult:
    n_classes = len(windows.classes)
    cfg = config.replace(delta=windows.delta)
    train_w = windows.windows(train_idx)
    trained = fit(train_w, windows.labels[train_idx], cfg, n_classes)

    pred_train, _ = predict(trained, train_w)
    z_test = _embed_indices(trained, windows, test_idx)
    pred_test, _ = trained.clusters.predict(z_test)
    truth_test = windows.labels[test_idx]
    cm_test = confusion_matrix(truth_test, pred_test, n_classes)
    cm_train = confusion_matrix(windows.labels[train_idx], pred_train, n_classes)
    sil = None
    if np.unique(pred_test).size >= 2:
        sil = silhouette(z_test, pred_test)[1]
    if checkpoint_dir is not None:
        save_checkpoint(trained, Path(checkpoint_dir) / f"fold{fold:02d}", cfg)
    return FoldResult(fold, int(train_idx.size), int(test_idx.size), metrics(cm_test), metrics(cm_train),
                      cm_test.tolist(), cm_train.tolist(), sil, trained.history)


def _embed_indices(trained: TrainedModel, windows: WindowSet, idx: np.ndarray, chunk: int = 256) -> np.ndarray:
    parts = [trained.model.embed(windows.windows(idx[i:i + chunk])) for i in range(0, idx.size, chunk)]
    return np.concatenate(parts, axis=0)


def save_checkpoint(trained: TrainedModel, directory: Path, config: TrainConfig) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_model(trained.model, directory / "model.json", {"config_fingerprint": trained.config_fingerprint})
    trained.clusters.save(directory / "clusters.json")
    (directory / "config.json").write_text(json.dumps(asdict(config), sort_keys=True))
    with (directory / "log.jsonl").open("w") as fh:
        for rec in trained.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _fold_job(args):
    windows, train_idx, test_idx, fold, config, ckpt = args
    try:
        return fold, run_fold(windows, train_idx, test_idx, fold, config, ckpt), None
    except (NumericalError, SeedingError, ValueError) as exc:
        return fold, None, f"{type(exc).__name__}: {exc}"


def default_jobs() -> int:
    return os.cpu_count() or 1


def run_cv(windows: WindowSet, config: TrainConfig, jobs: int = 1,
           checkpoint_dir: str | Path | None = None) -> EvaluationReport:
    """Train and test one model per fold; failed folds are recorded and left out of aggregates."""
    plan = make_folds(len(windows), config.split_mode, config.fold_count, config.effective_downsample,
                      config.rng_seed, windows.labels)
    failures = dict(plan.skipped)
    tasks = []
    for i in plan.active_folds():
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / windows.subject_id
        tasks.append((windows, plan.train[i], plan.test[i], i, config, ckpt))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fold_job, tasks))
    else:
        results = [_fold_job(t) for t in tasks]
    folds = []
    for fold, res, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            log.warning("subject %s fold %d failed: %s", windows.subject_id, fold, err)
            failures[fold] = err
        else:
            folds.append(res)
    return EvaluationReport(windows.subject_id, config.split_mode, list(windows.classes), folds, failures,
                            config.replace(delta=windows.delta).fingerprint(), windows.delta,
                            config.embedding_dim)


def aggregate(reports: Sequence[EvaluationReport]) -> dict:
    """Means across subjects of the per-subject fold means (test and train)."""
    done = [r for r in reports if r.folds]
    out = {"subjects": len(done)}
    for split in ("test", "train"):
        for key in ("accuracy", "precision_macro", "recall_macro"):
            vals = [r.summary()[f"{split}_{key}_mean"] for r in done]
            out[f"{split}_{key}"] = float(np.mean(vals)) if vals else None
    return out


def write_aggregate_csv(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    """Per-subject rows plus a mean row, in the layout of an accuracy/precision/recall table."""
    keys = ("accuracy", "precision_macro", "recall_macro")
    agg = aggregate(reports)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", *(f"test_{k}" for k in keys), *(f"train_{k}" for k in keys),
                    "silhouette_mean", "folds_completed", "folds_failed"])
        for r in reports:
            s = r.summary()
            w.writerow([r.subject_id, *(s.get(f"test_{k}_mean", "") for k in keys),
                        *(s.get(f"train_{k}_mean", "") for k in keys),
                        "" if s.get("silhouette_mean") is None else s["silhouette_mean"],
                        len(r.folds), len(r.failures)])
        w.writerow(["mean", *(agg[f"test_{k}"] for k in keys), *(agg[f"train_{k}"] for k in keys),
                    "", "", ""])


def write_quartiles_csv(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    """Box-plot data: per-subject accuracy quartiles across folds, test and train."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "split", "min", "q1", "median", "q3", "max"])
        for r in reports:
            if not r.folds:
                continue
            for split in ("test", "train"):
                q = r.quartiles(split)
                w.writerow([r.subject_id, split, q["min"], q["q1"], q["median"], q["q3"], q["max"]])


# -- sensitivity sweep ----------------------------------------------------------------

@dataclass
class SweepTable:
    """Mean test accuracy per subject and setting, for one swept parameter."""

    parameter: str
    settings: list[int]
    subjects: list[str]
    accuracy: dict[str, dict[int, float | None]]
    notes: list[str] = field(default_factory=list)

    def best(self, subject: str) -> int | None:
        row = {k: v for k, v in self.accuracy[subject].items() if v is not None}
        if not row:
            return None
        top = max(row.values())
        # ties go to the first listed setting
        return next(k for k in self.settings if row.get(k) == top)

    def setting_means(self) -> dict[int, float | None]:
        out = {}
        for k in self.settings:
            vals = [self.accuracy[s][k] for s in self.subjects if self.accuracy[s].get(k) is not None]
            out[k] = float(np.mean(vals)) if vals else None
        return out

    def best_mean(self) -> float | None:
        vals = [self.accuracy[s][self.best(s)] for s in self.subjects if self.best(s) is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "settings": self.settings,
            "subjects": self.subjects,
            "accuracy": {s: {str(k): v for k, v in row.items()} for s, row in self.accuracy.items()},
            "best": {s: self.best(s) for s in self.subjects},
            "setting_means": {str(k): v for k, v in self.setting_means().items()},
            "best_mean": self.best_mean(),
            "notes": self.notes,
        }

    def write_csv(self, path: str | Path) -> None:
        """One row per subject and setting, with a ``best`` flag marking the row maximum."""
        prefix = "seq" if self.parameter == "delta" else "emb"
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", *(f"{prefix} {k}" for k in self.settings), "best"])
            for s in self.subjects:
                row = self.accuracy[s]
                best = self.best(s)
                w.writerow([s, *("" if row.get(k) is None else row[k] for k in self.settings),
                            "" if best is None else f"{prefix} {best}"])
            means = self.setting_means()
            w.writerow(["mean", *("" if means[k] is None else means[k] for k in self.settings),
                        "" if self.best_mean() is None else self.best_mean()])

    def write_long_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", self.parameter, "accuracy", "best"])
            for s in self.subjects:
                best = self.best(s)
                for k in self.settings:
                    v = self.accuracy[s].get(k)
                    w.writerow([s, k, "" if v is None else v, int(k == best)])


def sensitivity_sweep(sessions: Sequence[PreparedSession], base: TrainConfig,
                      deltas: Sequence[int] = (128, 256, 600, 960), dims: Sequence[int] = (30, 40, 60),
                      jobs: int = 1, fixed_delta: int = 600, fixed_dim: int = 30,
                      progress: Callable[[str], None] | None = None) -> tuple[SweepTable, SweepTable, dict]:
    """Full CV per grid point: delta varied at ``fixed_dim``, embedding size varied at ``fixed_delta``.

    The shared point (fixed_delta, fixed_dim) is evaluated once.  Returns the
    delta table, the embedding-size table and the reports keyed by
    (subject, delta, embedding_dim).
    """
    subjects = [s.subject_id for s in sessions]
    reports: dict[tuple[str, int, int], EvaluationReport] = {}
    tables = []
    for parameter, grid in (("delta", list(deltas)), ("embedding_dim", list(dims))):
        acc: dict[str, dict[int, float | None]] = {s: {} for s in subjects}
        notes = []
        for session in sessions:
            for value in grid:
                delta = value if parameter == "delta" else fixed_delta
                dim = value if parameter == "embedding_dim" else fixed_dim
                key = (session.subject_id, delta, dim)
                if key not in reports:
                    cfg = base.replace(delta=delta, embedding_dim=dim)
                    try:
                        windows = make_windows(session, delta)
                        reports[key] = run_cv(windows, cfg, jobs)
                    except (EmptyWindowSetError, ValueError) as exc:
                        notes.append(f"{session.subject_id} {parameter}={value} skipped: {exc}")
                        acc[session.subject_id][value] = None
                        continue
                report = reports[key]
                acc[session.subject_id][value] = report.mean_accuracy if report.folds else None
                if progress:
                    progress(f"{session.subject_id} {parameter}={value} accuracy={acc[session.subject_id][value]}")
        tables.append(SweepTable(parameter, grid, subjects, acc, notes))
    return tables[0], tables[1], reports
