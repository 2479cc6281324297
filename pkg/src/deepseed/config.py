"""Run configuration with the published model parameters as defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

CONFIG_FORMAT = "deepseed-config/1"

SEQUENTIAL = "sequential"
NON_SEQUENTIAL = "non-sequential"
SPLIT_MODES = (SEQUENTIAL, NON_SEQUENTIAL)

# training-set thinning used with each split mode
DOWNSAMPLE_DEFAULTS = {SEQUENTIAL: 10, NON_SEQUENTIAL: 2000}


@dataclass
class TrainConfig:
    delta: int = 600
    embedding_dim: int = 30
    epochs: int = 100
    gamma: float = 0.1
    lr_train: float = 5e-5
    lr_pretrain: float = 1e-6
    pretrain_epochs: int = 1
    batch_size: int = 64
    rng_seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    split_mode: str = NON_SEQUENTIAL
    downsample_factor: int | None = None  # None -> DOWNSAMPLE_DEFAULTS[split_mode]
    fold_count: int = 10
    # "closed-form" refreshes centroids with the weighted-mean update;
    # "gradient" is reserved for descending L through the centroids.
    centroid_update: str = "closed-form"

    def __post_init__(self):
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}, got {self.split_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.centroid_update not in ("closed-form", "gradient"):
            raise ValueError(f"unknown centroid_update {self.centroid_update!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        for name in ("delta", "embedding_dim", "batch_size", "fold_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be non-negative")

    @property
    def effective_downsample(self) -> int:
        if self.downsample_factor is None:
            return DOWNSAMPLE_DEFAULTS[self.split_mode]
        return self.downsample_factor

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        return fingerprint(dataclasses.asdict(self))


@dataclass
class RunConfig:
    dataset_root: str | None = None
    seeding_mode: str = "contextual"
    output_dir: str = "runs"
    cache_dir: str | None = None  # defaults to <output_dir>/cache
    run_name: str | None = None  # defaults to a timestamp
    jobs: int | None = None
    sweep_deltas: list[int] = field(default_factory=lambda: [128, 256, 600, 960])
    sweep_dims: list[int] = field(default_factory=lambda: [30, 40, 60])
    sg_window: int = 11
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.seeding_mode not in ("contextual", "self-reported"):
            raise ValueError(f"seeding_mode must be contextual or self-reported, got {self.seeding_mode!r}")

    @property
    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["format"] = CONFIG_FORMAT
        return d

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


def fingerprint(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def train_keys() -> list[str]:
    return [f.name for f in fields(TrainConfig)]


def run_keys() -> list[str]:
    return [f.name for f in fields(RunConfig) if f.name != "train"]


def from_flat(values: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a flat key/value mapping (config file or CLI flags).

    Keys may be given with dashes or underscores.  Unknown keys are an error.
    """
    norm = {k.replace("-", "_"): v for k, v in values.items() if v is not None}
    norm.pop("format", None)
    nested = norm.pop("train", None) or {}
    tkeys, rkeys = set(train_keys()), set(run_keys())
    unknown = set(norm) - tkeys - rkeys
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    tvals = {k.replace("-", "_"): v for k, v in nested.items()}
    tvals.update({k: v for k, v in norm.items() if k in tkeys})
    rvals = {k: v for k, v in norm.items() if k in rkeys}
    return RunConfig(train=TrainConfig(**tvals), **rvals)


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a key/value mapping")
        values.update(loaded)
    if overrides:
        values.update({k.replace("-", "_"): v for k, v in overrides.items() if v is not None})
    return from_flat(values)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
