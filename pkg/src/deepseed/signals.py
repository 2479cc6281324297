"""Ingestion, smoothing, scaling, resampling and windowing of wristband recordings.

Raw sessions come as Empatica E4 style CSV exports: one file per channel whose
first line is the start time (UNIX seconds), second line the sample rate, and
then one value per line.  A ``labels.csv`` file lists the labelled intervals.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import savgol_coeffs

log = logging.getLogger(__name__)

CHANNELS = ("EDA", "BVP", "TEMP")
NATIVE_RATES = (4.0, 64.0)
TARGET_HZ = 64
CACHE_FORMAT = "deepseed-cache/1"
SMOOTHED_CHANNELS = ("EDA", "TEMP")

LABEL_FILES = {"contextual": "labels.csv", "self-reported": "selfreport.csv"}


class DataError(ValueError):
    """Base class for problems with input recordings."""


class MissingFileError(DataError):
    pass


class RateLineError(DataError):
    pass


class OverlappingIntervalsError(DataError):
    pass


class EmptyWindowSetError(DataError):
    pass


@dataclass
class Channel:
    name: str
    sample_rate_hz: float
    samples: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.name not in CHANNELS:
            raise DataError(f"unknown channel {self.name!r}")
        if self.sample_rate_hz <= 0:
            raise DataError(f"{self.name}: sample rate must be positive")
        if self.samples.size == 0:
            raise DataError(f"{self.name}: no samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class LabelInterval:
    label: str
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise DataError(f"interval {self.label!r}: t_start {self.t_start} must precede t_end {self.t_end}")


def check_intervals(intervals: Sequence[LabelInterval]) -> list[LabelInterval]:
    ordered = sorted(intervals, key=lambda iv: (iv.t_start, iv.t_end))
    for a, b in zip(ordered, ordered[1:]):
        if b.t_start < a.t_end:
            raise OverlappingIntervalsError(
                f"overlapping intervals: {a.label} [{a.t_start}, {a.t_end}) and {b.label} [{b.t_start}, {b.t_end})"
            )
    return ordered


@dataclass
class SignalSession:
    subject_id: str
    channels: dict[str, Channel]
    intervals: list[LabelInterval]
    seeding_mode: str = "contextual"

    def __post_init__(self):
        missing = [c for c in CHANNELS if c not in self.channels]
        if missing:
            raise DataError(f"session {self.subject_id}: missing channels {missing}")
        self.intervals = check_intervals(self.intervals)


@dataclass
class PreparedSession:
    """Smoothed, resampled, cropped and scaled session; ``data`` is (T, 3) at ``sample_rate``."""

    subject_id: str
    data: np.ndarray
    intervals: list[LabelInterval]
    sample_rate: int = TARGET_HZ
    classes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.classes:
            self.classes = sorted({iv.label for iv in self.intervals})

    def interval_index(self) -> np.ndarray:
        """Per-sample index into ``intervals`` (-1 where unlabelled)."""
        n = self.data.shape[0]
        idx = np.full(n, -1, dtype=np.int64)
        times = np.arange(n) / self.sample_rate
        for i, iv in enumerate(self.intervals):
            idx[(times >= iv.t_start) & (times < iv.t_end)] = i
        return idx


@dataclass
class WindowSet:
    """Overlapping windows over a scaled (T, 3) array, materialized on demand."""

    data: np.ndarray
    starts: np.ndarray
    labels: np.ndarray
    delta: int
    classes: list[str]
    subject_id: str = ""

    def __len__(self) -> int:
        return int(self.starts.size)

    def windows(self, indices: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Return a (B, delta, 3) copy of the selected windows."""
        view = np.lib.stride_tricks.sliding_window_view(self.data, self.delta, axis=0)
        starts = self.starts if indices is None else self.starts[np.asarray(indices, dtype=np.int64)]
        # sliding_window_view puts the window axis last
        return np.ascontiguousarray(view[starts].transpose(0, 2, 1))

    def subset(self, indices) -> "WindowSet":
        idx = np.asarray(indices, dtype=np.int64)
        return WindowSet(self.data, self.starts[idx], self.labels[idx], self.delta, self.classes, self.subject_id)


# -- signal operations ----------------------------------------------------------

def savitzky_golay(samples, window_length: int = 11, poly_order: int = 1) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if window_length < 1 or window_length % 2 == 0:
        raise ValueError(f"window_length must be odd and positive, got {window_length}")
    if poly_order < 0 or poly_order >= window_length:
        raise ValueError(f"poly_order {poly_order} must be in [0, window_length)")
    if x.size < window_length:
        raise ValueError(f"window_length {window_length} exceeds sequence length {x.size}")
    half = window_length // 2
    # point-symmetric mirror about each end sample, so polynomials of order <= 1 extend exactly
    padded = np.concatenate([2 * x[0] - x[half:0:-1], x, 2 * x[-1] - x[-2:-half - 2:-1]])
    return np.convolve(padded, savgol_coeffs(window_length, poly_order), mode="valid")


def min_max_scale(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot scale an empty sequence")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def upsample(channel: Channel, target_hz: int = TARGET_HZ) -> Channel:
    """Linear interpolation onto a ``target_hz`` grid, holding the last value at the tail."""
    ratio = target_hz / channel.sample_rate_hz
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError(
            f"{channel.name}: target {target_hz} Hz is not an integer multiple of {channel.sample_rate_hz} Hz"
        )
    r = int(round(ratio))
    if r == 1:
        return Channel(channel.name, float(target_hz), channel.samples.copy(), channel.start_time)
    n = channel.samples.size
    grid = np.arange(n * r) / r
    values = np.interp(grid, np.arange(n), channel.samples)
    return Channel(channel.name, float(target_hz), values, channel.start_time)


def preprocess(session: SignalSession, sg_window: int = 11, target_hz: int = TARGET_HZ) -> PreparedSession:
    """Smooth EDA/TEMP at native rate, upsample, crop to the common span, min-max scale."""
    resampled = {}
    for name in CHANNELS:
        ch = session.channels[name]
        if name in SMOOTHED_CHANNELS:
            ch = Channel(name, ch.sample_rate_hz, savitzky_golay(ch.samples, sg_window, 1), ch.start_time)
        resampled[name] = upsample(ch, target_hz)

    t0 = max(ch.start_time for ch in resampled.values())
    t1 = min(ch.start_time + ch.duration for ch in resampled.values())
    if t1 <= t0:
        raise DataError(f"session {session.subject_id}: channels do not overlap in time")
    n = int(round((t1 - t0) * target_hz))
    cols = []
    for name in CHANNELS:
        ch = resampled[name]
        off = int(round((t0 - ch.start_time) * target_hz))
        seg = ch.samples[off:off + n]
        n = min(n, seg.size)
        cols.append(seg)
    data = np.column_stack([min_max_scale(c[:n]) for c in cols])

    # shift labels so t=0 is the first retained sample
    intervals = []
    for iv in session.intervals:
        a, b = iv.t_start - t0, iv.t_end - t0
        if b <= 0 or a >= n / target_hz:
            continue
        intervals.append(LabelInterval(iv.label, max(a, 0.0), min(b, n / target_hz)))
    return PreparedSession(session.subject_id, data, intervals, target_hz,
                           sorted({iv.label for iv in session.intervals}))


def label_runs(session: PreparedSession) -> list[tuple[int, int, int]]:
    """Maximal runs of samples covered by one interval, as (start, stop, interval_idx)."""
    idx = session.interval_index()
    runs = []
    if idx.size == 0:
        return runs
    change = np.flatnonzero(np.diff(idx)) + 1
    bounds = np.concatenate([[0], change, [idx.size]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        if idx[a] >= 0:
            runs.append((int(a), int(b), int(idx[a])))
    return runs


def windows_per_run(length: int, delta: int, step: int = 1) -> int:
    return (length - delta) // step + 1 if length >= delta else 0


def make_windows(session: PreparedSession, delta: int = 600, step: int = 1) -> WindowSet:
    if delta < 1 or step < 1:
        raise ValueError("delta and step must be >= 1")
    class_id = {c: i for i, c in enumerate(session.classes)}
    starts, labels = [], []
    for a, b, iv in label_runs(session):
        count = windows_per_run(b - a, delta, step)
        if count:
            starts.append(a + step * np.arange(count))
            labels.append(np.full(count, class_id[session.intervals[iv].label]))
    if not starts:
        raise EmptyWindowSetError(
            f"session {session.subject_id}: no labelled run is at least {delta} samples long"
        )
    return WindowSet(session.data, np.concatenate(starts).astype(np.int64),
                     np.concatenate(labels).astype(np.int64), delta, list(session.classes),
                     session.subject_id)


# -- E4 CSV layout ------------------------------------------------------------

def _read_channel(path: Path, name: str) -> tuple[float, float, np.ndarray]:
    if not path.is_file():
        raise MissingFileError(f"missing {path.name} in {path.parent}")
    lines = path.read_text().splitlines()
    if len(lines) < 3:
        raise DataError(f"{path}: expected start time, rate and at least one sample")
    try:
        start = float(lines[0].split(",")[0])
    except ValueError as exc:
        raise DataError(f"{path}: malformed start time line {lines[0]!r}") from exc
    try:
        rate = float(lines[1].split(",")[0])
    except ValueError as exc:
        raise RateLineError(f"{path}: malformed sample rate line {lines[1]!r}") from exc
    if not any(abs(rate - r) < 1e-6 for r in NATIVE_RATES):
        raise RateLineError(f"{path}: sample rate {rate} not in {NATIVE_RATES}")
    try:
        values = np.array([float(v.split(",")[0]) for v in lines[2:] if v.strip()])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric sample") from exc
    return start, round(rate), values


def read_labels(path: Path) -> list[LabelInterval]:
    if not path.is_file():
        raise MissingFileError(f"missing {path.name} in {path.parent}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"label", "t_start", "t_end"}:
            raise DataError(f"{path}: header must be label,t_start,t_end")
        rows = [LabelInterval(r["label"].strip(), float(r["t_start"]), float(r["t_end"])) for r in reader]
    return check_intervals(rows)


def ingest_e4_csv(directory: str | Path, seeding_mode: str = "contextual") -> SignalSession:
    """Read one subject directory.  Channel start times become relative to the earliest one."""
    d = Path(directory)
    raw = {name: _read_channel(d / f"{name}.csv", name) for name in CHANNELS}
    origin = min(start for start, _, _ in raw.values())
    channels = {
        name: Channel(name, float(rate), values, start - origin)
        for name, (start, rate, values) in raw.items()
    }
    intervals = read_labels(d / LABEL_FILES[seeding_mode])
    return SignalSession(d.name, channels, intervals, seeding_mode)


def write_e4_csv(session: SignalSession, directory: str | Path, origin_epoch: float = 1_600_000_000.0) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in CHANNELS:
        ch = session.channels[name]
        body = "\n".join(repr(float(v)) for v in ch.samples)
        (d / f"{name}.csv").write_text(
            f"{origin_epoch + ch.start_time:.6f}\n{ch.sample_rate_hz:.6f}\n{body}\n"
        )
    with (d / LABEL_FILES[session.seeding_mode]).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "t_start", "t_end"])
        for iv in session.intervals:
            w.writerow([iv.label, repr(iv.t_start), repr(iv.t_end)])
    return d


# -- preprocessed cache ---------------------------------------------------------

def save_cache(session: PreparedSession, windows: WindowSet, path: str | Path) -> None:
    doc = {
        "format": CACHE_FORMAT,
        "subject_id": session.subject_id,
        "sample_rate": session.sample_rate,
        "channels": list(CHANNELS),
        "classes": session.classes,
        "intervals": [[iv.label, iv.t_start, iv.t_end] for iv in session.intervals],
        "data": [session.data[:, j].tolist() for j in range(session.data.shape[1])],
        "delta": windows.delta,
        "window_starts": windows.starts.tolist(),
        "window_labels": windows.labels.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_cache(path: str | Path) -> tuple[PreparedSession, WindowSet]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CACHE_FORMAT:
        raise DataError(f"{path}: unsupported cache format {doc.get('format')!r}")
    data = np.column_stack([np.asarray(c, dtype=np.float64) for c in doc["data"]])
    intervals = [LabelInterval(l, a, b) for l, a, b in doc["intervals"]]
    session = PreparedSession(doc["subject_id"], data, intervals, doc["sample_rate"], doc["classes"])
    ws = WindowSet(data, np.asarray(doc["window_starts"], dtype=np.int64),
                   np.asarray(doc["window_labels"], dtype=np.int64), doc["delta"],
                   doc["classes"], doc["subject_id"])
    return session, ws
