from __future__ import annotations

import numpy as np
import pytest

from deepseed.signals import make_windows, preprocess
from deepseed.synthetic import generate, separable_specs
from deepseed.tensor import Tape


def numeric_grad(f, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``array`` (perturbed in place)."""
    g = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = array[i]
        array[i] = old + h
        up = f()
        array[i] = old - h
        down = f()
        array[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def analytic_grads(build, params):
    """Run ``build()`` on a fresh tape and return the gradients of ``params``."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


@pytest.fixture(scope="session")
def two_class_session():
    session = generate(separable_specs(duration=20.0, n_classes=2), rng_seed=3, noise_sigma=0.02)
    return preprocess(session)


@pytest.fixture(scope="session")
def two_class_windows(two_class_session):
    return make_windows(two_class_session, delta=16)


ACCEPTANCE: list[str] = []


def criterion(name: str, ok: bool, detail: str = "") -> None:
    """Record one acceptance line, print it, then assert on it."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
