"""Acceptance checks, one recorded PASS/FAIL line per criterion.

The lines are printed inline (visible with ``-s``) and repeated in an
"acceptance criteria" section at the end of the pytest run.
"""

import time

import numpy as np
import pytest

import oracles
from deepseed.autoencoder import AutoencoderModel
from deepseed.clustering import (
    cmeans_centroids,
    cmeans_loss,
    cmeans_membership,
    distance_weights,
    kmeans,
    kmeans_assign,
    kmeans_loss,
    kmeans_update,
    saturated_distance,
    sq_distances,
)
from deepseed.config import NON_SEQUENTIAL, TrainConfig
from deepseed.evaluation import run_cv, sensitivity_sweep
from deepseed.signals import (
    LabelInterval,
    PreparedSession,
    make_windows,
    min_max_scale,
    preprocess,
    savitzky_golay,
)
from deepseed.synthetic import generate, separable_specs
from deepseed.tensor import Tape
from deepseed.trainer import joint_loss

from conftest import criterion, numeric_grad, rel_error

# Defaults scaled to delta=128 and 30 epochs.  A thinning factor of 50 keeps
# about 65 training windows per fold, i.e. one or two batches per epoch.
E2E = TrainConfig(delta=128, epochs=30, split_mode=NON_SEQUENTIAL, fold_count=10, downsample_factor=50)


def _random_instance(rng):
    n, d, k = rng.integers(3, 21), rng.integers(1, 4), rng.integers(1, 4)
    return rng.normal(size=(n, d)) * rng.uniform(0.2, 3.0), rng.normal(size=(k, d))


def test_gradient_fidelity():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    model = AutoencoderModel(8, 4, seed=3)
    w = np.clip(0.5 + 0.2 * rng.normal(size=(6, 8, 3)), 0, 1)
    centroids = rng.normal(size=(2, 4))
    u = cmeans_membership(model.embed(w), centroids, 0.1)

    def value():
        return joint_loss(model, w, centroids, u)[0].item()

    with Tape() as tape:
        loss, _, _ = joint_loss(model, w, centroids, u)
    tape.backward(loss)
    worst = max(rel_error(p.grad, numeric_grad(value, p.data), floor=1e-6) for p in model.parameters())
    elapsed = time.perf_counter() - start
    criterion("gradient fidelity", worst < 1e-4 and elapsed < 10,
              f"max rel err {worst:.2e}, {elapsed:.1f} s")


def test_clustering_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        x, c = _random_instance(rng)
        xs, cs = x.tolist(), c.tolist()
        labels = oracles.assign(xs, cs)
        s = kmeans_assign(x, c)
        assert np.argmax(s, axis=1).tolist() == labels
        errs = [abs(kmeans_loss(x, c) - oracles.kmeans_loss(xs, cs, labels))]
        new_c = kmeans_update(x, s, c)
        for k in set(labels):
            want = oracles.kmeans_centroid(xs, [t for t, lab in enumerate(labels) if lab == k])
            errs.append(np.max(np.abs(new_c[k] - want)))
        u = cmeans_membership(x, c, 0.1)
        errs.append(np.max(np.abs(u - np.array(oracles.membership(xs, cs, 0.1)))))
        errs.append(np.max(np.abs(cmeans_centroids(x, u, c) - np.array(oracles.cmeans_centroids(xs, u.tolist(), cs)))))
        errs.append(abs(cmeans_loss(x, c, u, normalize=False) - oracles.cmeans_loss(xs, cs, u.tolist())))
        worst = max(worst, *errs)
    elapsed = time.perf_counter() - start
    criterion("clustering oracle equivalence", worst < 1e-10 and elapsed < 5,
              f"100 instances, max abs err {worst:.1e}, {elapsed:.2f} s")


def test_cmeans_algebra():
    rng = np.random.default_rng(7)
    row_err, hard_ok = 0.0, True
    for _ in range(100):
        x, c = _random_instance(rng)
        for gamma in (1e-3, 0.1, 1.0, 10.0):
            row_err = max(row_err, float(np.max(np.abs(cmeans_membership(x, c, gamma).sum(axis=1) - 1))))
        q = np.sort(saturated_distance(sq_distances(x, c)), axis=1)
        strict = q[:, 1] - q[:, 0] > 1e-4 if c.shape[0] > 1 else np.ones(len(x), bool)
        u = cmeans_membership(x, c, 1e-6)
        hard_ok &= bool(np.allclose(u[strict], kmeans_assign(x, c)[strict], atol=1e-9))
    # the centre of a regular pentagon of centroids, and points on the bisector of a pair
    angles = 2 * np.pi * np.arange(5) / 5
    simplex = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    uniform = cmeans_membership([[0.0, 0.0]], simplex, 0.1)
    pair = cmeans_membership([[0.0, 3.0], [0.0, -2.5]], [[1.0, 0.0], [-1.0, 0.0]], 0.1)
    symmetric = np.allclose(uniform, 0.2, atol=1e-15) and np.allclose(pair, 0.5, atol=1e-15)
    d0 = float(distance_weights([[0.3, -1.2]], [[0.3, -1.2]])[0, 0])
    ok = row_err < 1e-9 and symmetric and hard_ok and d0 == 2.0
    criterion("c-means algebra", ok,
              f"row-sum err {row_err:.1e}, equidistant uniform {symmetric}, gamma->0 hard {hard_ok}, d(0)={d0!r}")


def test_kmeans_monotone():
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(50):
        n, d, k = rng.integers(5, 31), rng.integers(1, 4), rng.integers(1, 5)
        _, _, history = kmeans(rng.normal(size=(n, d)) * 2, rng.normal(size=(k, d)), iterations=8)
        bad += any(b > a + 1e-12 for a, b in zip(history, history[1:]))
    criterion("k-means loss non-increasing", bad == 0, f"{50 - bad}/50 instances monotone")


def _session(lengths):
    rate, t, intervals = 64.0, 0, []
    for i, n in enumerate(lengths):
        intervals.append(LabelInterval(f"c{i % 2}", t / rate, (t + n) / rate))
        t += n
    return PreparedSession("X", np.linspace(0, 1, 3 * t).reshape(t, 3), intervals, rate)


def test_preprocessing_exactness():
    rng = np.random.default_rng(5)
    sg_err = 0.0
    for _ in range(50):
        n, window = int(rng.integers(12, 400)), int(rng.choice([3, 5, 7, 11]))
        a, b = rng.uniform(-100, 100, 2)
        x = a * np.arange(n) / n + b
        sg_err = max(sg_err, float(np.max(np.abs(savitzky_golay(x, window, 1) - x))))
    mm_ok = True
    for _ in range(50):
        x = rng.normal(size=int(rng.integers(1, 200))) * rng.uniform(0.01, 1e3)
        y = min_max_scale(x)
        mm_ok &= bool(np.all((y >= 0) & (y <= 1)) and np.array_equal(min_max_scale(y), y))
    count_ok = True
    for _ in range(20):
        lengths = rng.integers(130, 700, size=int(rng.integers(1, 5))).tolist()
        delta = int(rng.integers(1, 129))
        want = sum(n - delta + 1 for n in lengths)
        count_ok &= len(make_windows(_session(lengths), delta)) == want
    criterion("preprocessing exactness", sg_err < 1e-10 and mm_ok and count_ok,
              f"SG affine err {sg_err:.1e}, min-max ok {mm_ok}, window counts exact {count_ok}")


@pytest.fixture(scope="module")
def e2e():
    start = time.perf_counter()
    session = preprocess(generate(separable_specs(30.0, 2), rng_seed=0, noise_sigma=0.05))
    report = run_cv(make_windows(session, E2E.delta), E2E)
    return report, time.perf_counter() - start


@pytest.mark.slow
def test_end_to_end_recovery(e2e):
    report, elapsed = e2e
    ok = len(report.folds) == 10 and report.mean_accuracy >= 0.90 and elapsed < 300
    criterion("end-to-end synthetic recovery", ok,
              f"{len(report.folds)} folds, mean test accuracy {report.mean_accuracy:.4f}, {elapsed:.0f} s")


@pytest.mark.slow
def test_no_overfit(e2e):
    report, _ = e2e
    train = np.array([f.train["accuracy"] for f in report.folds])
    test = np.array([f.test["accuracy"] for f in report.folds])
    gap = abs(float(np.median(train) - np.median(test)))
    per_fold = float(np.median(np.abs(train - test)))
    criterion("no-overfit", gap < 0.10 and per_fold < 0.10,
              f"median gap {100 * gap:.2f} pp, median per-fold gap {100 * per_fold:.2f} pp")


def test_determinism():
    session = preprocess(generate(separable_specs(15.0, 2), rng_seed=1, noise_sigma=0.05))
    windows = make_windows(session, 128)
    cfg = E2E.replace(epochs=5, fold_count=3)
    a, b = run_cv(windows, cfg), run_cv(windows, cfg)
    same_hist = all(x.history == y.history for x, y in zip(a.folds, b.folds))
    same = same_hist and a.to_dict() == b.to_dict() and len(a.folds) == 3
    criterion("determinism", same, f"histories identical {same_hist}, reports identical {a.to_dict() == b.to_dict()}")


@pytest.mark.slow
def test_sensitivity_harness():
    start = time.perf_counter()
    sessions = [preprocess(generate(separable_specs(16.0, 2), rng_seed=s, noise_sigma=0.05, subject_id=f"S0{s + 1}"))
                for s in range(3)]
    base = TrainConfig(epochs=2, fold_count=2, downsample_factor=40)
    dt, et, reports = sensitivity_sweep(sessions, base, deltas=(128, 256, 600, 960), dims=(30, 40, 60))
    complete = all(v is not None for t in (dt, et) for row in t.accuracy.values() for v in row.values())
    dominated = all(t.best_mean() >= m for t in (dt, et) for m in t.setting_means().values())
    elapsed = time.perf_counter() - start
    criterion("sensitivity harness", complete and dominated and len(reports) == 3 * 6,
              f"best delta-mean {dt.best_mean():.4f} vs settings "
              f"{[round(v, 4) for v in dt.setting_means().values()]}, best D-mean {et.best_mean():.4f} vs "
              f"{[round(v, 4) for v in et.setting_means().values()]}, {elapsed:.0f} s")
