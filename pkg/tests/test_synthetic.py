import numpy as np
import pytest
from scipy.stats import spearmanr

from deepseed.config import TrainConfig
from deepseed.evaluation import run_cv
from deepseed.signals import ingest_e4_csv, make_windows, preprocess
from deepseed.synthetic import RegimeSpec, generate, separable_specs, write_dataset


class TestGenerate:
    def test_two_regimes(self):
        session = generate([RegimeSpec("A", 60.0), RegimeSpec("B", 60.0, eda_level=2.0)])
        assert len(session.intervals) == 2
        assert session.channels["EDA"].samples.size == 480
        assert session.channels["TEMP"].sample_rate_hz == 4 and session.channels["BVP"].sample_rate_hz == 64
        assert session.channels["BVP"].samples.size == 120 * 64

    def test_same_seed(self):
        a = generate(separable_specs(10.0, 3), rng_seed=4, noise_sigma=0.1)
        b = generate(separable_specs(10.0, 3), rng_seed=4, noise_sigma=0.1)
        c = generate(separable_specs(10.0, 3), rng_seed=5, noise_sigma=0.1)
        for name in a.channels:
            assert np.array_equal(a.channels[name].samples, b.channels[name].samples)
        assert not np.array_equal(a.channels["EDA"].samples, c.channels["EDA"].samples)

    def test_zero_duration(self):
        with pytest.raises(ValueError, match="duration"):
            RegimeSpec("A", 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            generate([])

    def test_noise_free_is_separable_by_channel_mean(self):
        session = preprocess(generate(separable_specs(20.0, 2), noise_sigma=0.0))
        ws = make_windows(session, 64)
        means = ws.windows().mean(axis=1)
        # a single threshold on the TEMP mean splits the classes
        temp = means[:, 2]
        assert temp[ws.labels == 0].min() > temp[ws.labels == 1].max()

    def test_label_purity(self):
        specs = [RegimeSpec("A", 5.0, temp_level=30.0), RegimeSpec("B", 5.0, temp_level=36.0, temp_slope=0.1)]
        session = generate(specs)
        temp = session.channels["TEMP"].samples
        t = np.arange(temp.size) / 4.0
        for iv, spec in zip(session.intervals, specs):
            inside = (t >= iv.t_start) & (t < iv.t_end)
            expect = spec.temp_level + spec.temp_slope * (t[inside] - iv.t_start)
            assert np.allclose(temp[inside], expect)

    def test_repeats_cycle_labels(self):
        specs = separable_specs(5.0, 2, repeats=2)
        assert [s.label for s in specs] == ["baseline", "stress", "baseline", "stress"]

    def test_dataset_round_trip(self, tmp_path):
        paths = write_dataset(tmp_path, n_subjects=2, duration=8.0)
        assert [p.name for p in paths] == ["S01", "S02"]
        session = ingest_e4_csv(paths[1])
        fresh = generate(separable_specs(8.0, 2), 1, 0.05, subject_id="S02")
        assert np.array_equal(session.channels["EDA"].samples, fresh.channels["EDA"].samples)
        assert session.intervals == fresh.intervals


class TestSeparabilityDial:
    def test_accuracy_falls_with_noise(self):
        cfg = TrainConfig(delta=16, embedding_dim=6, epochs=3, batch_size=32, lr_pretrain=1e-3,
                          lr_train=1e-3, fold_count=3, downsample_factor=40)
        sigmas = [0.0, 0.3, 1.0, 3.0, 10.0]
        acc = []
        for s in sigmas:
            session = preprocess(generate(separable_specs(15.0, 2, repeats=2), rng_seed=1, noise_sigma=s))
            acc.append(run_cv(make_windows(session, 16), cfg).mean_accuracy)
        assert spearmanr(sigmas, acc).statistic < 0
