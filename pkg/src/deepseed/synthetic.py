"""Deterministic labelled sessions for tests and demos.

Each regime produces an EDA-like tonic level with exponentially decaying
phasic bumps, a sinusoidal BVP-like pulse and a drifting TEMP-like level.
EDA and TEMP are generated at 4 Hz and BVP at 64 Hz, like the wristband.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .signals import Channel, LabelInterval, SignalSession, write_e4_csv

SLOW_HZ = 4.0
FAST_HZ = 64.0


@dataclass(frozen=True)
class RegimeSpec:
    label: str
    duration: float
    eda_level: float = 1.0
    eda_bump_rate: float = 0.0  # bumps per second
    eda_bump_height: float = 0.0
    eda_bump_tau: float = 2.0  # decay constant in seconds
    bvp_level: float = 0.0
    bvp_freq: float = 1.2
    bvp_amp: float = 1.0
    temp_level: float = 33.0
    temp_slope: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"regime {self.label!r}: duration must be positive")


def _regime_signals(spec: RegimeSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    n_slow = int(round(spec.duration * SLOW_HZ))
    n_fast = int(round(spec.duration * FAST_HZ))
    t_slow = np.arange(n_slow) / SLOW_HZ
    t_fast = np.arange(n_fast) / FAST_HZ

    eda = np.full(n_slow, spec.eda_level)
    if spec.eda_bump_rate > 0 and spec.eda_bump_height != 0:
        n_bumps = rng.poisson(spec.eda_bump_rate * spec.duration)
        for onset in np.sort(rng.uniform(0, spec.duration, n_bumps)):
            after = t_slow >= onset
            eda[after] += spec.eda_bump_height * np.exp(-(t_slow[after] - onset) / spec.eda_bump_tau)
    bvp = spec.bvp_level + spec.bvp_amp * np.sin(2 * np.pi * spec.bvp_freq * t_fast)
    temp = spec.temp_level + spec.temp_slope * t_slow
    return {"EDA": eda, "BVP": bvp, "TEMP": temp}


def generate(specs: Sequence[RegimeSpec], rng_seed: int = 0, noise_sigma: float = 0.0,
             subject_id: str = "S01", seeding_mode: str = "contextual") -> SignalSession:
    """Concatenate regimes into one session with matching label intervals."""
    if not specs:
        raise ValueError("need at least one regime")
    rng = np.random.default_rng(rng_seed)
    parts: dict[str, list[np.ndarray]] = {"EDA": [], "BVP": [], "TEMP": []}
    intervals = []
    t = 0.0
    for spec in specs:
        for name, values in _regime_signals(spec, rng).items():
            parts[name].append(values)
        intervals.append(LabelInterval(spec.label, t, t + spec.duration))
        t += spec.duration
    channels = {}
    for name, chunks in parts.items():
        values = np.concatenate(chunks)
        if noise_sigma > 0:
            values = values + rng.normal(0.0, noise_sigma, values.size)
        rate = FAST_HZ if name == "BVP" else SLOW_HZ
        channels[name] = Channel(name, rate, values, 0.0)
    return SignalSession(subject_id, channels, intervals, seeding_mode)


def separable_specs(duration: float = 60.0, n_classes: int = 2, separation: float = 1.0,
                    repeats: int = 1) -> list[RegimeSpec]:
    """Regimes whose channel baselines differ by ``separation`` per class step.

    With ``repeats > 1`` the class sequence is cycled, e.g. A B A B.
    """
    names = ["baseline", "stress", "amusement", "meditation"][:n_classes]
    if n_classes > 4:
        names = [f"class{i}" for i in range(n_classes)]
    out = []
    for _ in range(repeats):
        for i, name in enumerate(names):
            out.append(RegimeSpec(
                label=name, duration=duration,
                eda_level=1.0 + separation * i, eda_bump_rate=0.05 * (1 + i), eda_bump_height=0.2,
                bvp_level=0.0, bvp_freq=1.0 + 0.3 * i, bvp_amp=1.0 - 0.2 * separation * i / max(n_classes, 1),
                temp_level=33.0 - 0.5 * separation * i, temp_slope=0.002 * (i + 1),
            ))
    return out


def write_dataset(root: str | Path, n_subjects: int = 3, duration: float = 60.0, n_classes: int = 2,
                  noise_sigma: float = 0.05, separation: float = 1.0, repeats: int = 1,
                  rng_seed: int = 0) -> list[Path]:
    """Write ``n_subjects`` synthetic subjects as E4-style CSV directories under ``root``."""
    root = Path(root)
    paths = []
    for s in range(n_subjects):
        sid = f"S{s + 1:02d}"
        session = generate(separable_specs(duration, n_classes, separation, repeats),
                           rng_seed + s, noise_sigma, subject_id=sid)
        paths.append(write_e4_csv(session, root / sid))
    return paths
