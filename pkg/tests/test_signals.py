import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepseed.signals import (
    Channel,
    DataError,
    EmptyWindowSetError,
    LabelInterval,
    MissingFileError,
    OverlappingIntervalsError,
    PreparedSession,
    RateLineError,
    SignalSession,
    ingest_e4_csv,
    label_runs,
    load_cache,
    make_windows,
    min_max_scale,
    preprocess,
    save_cache,
    savitzky_golay,
    upsample,
    windows_per_run,
    write_e4_csv,
)
from deepseed.synthetic import generate, separable_specs

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def _sg_oracle(x, window):
    """Order-1 Savitzky-Golay with odd mirror padding, by explicit line fits.

    Each window is fitted by least squares and the line is read at the centre.
    """
    half = window // 2
    left = [2 * x[0] - x[k] for k in range(half, 0, -1)]
    right = [2 * x[-1] - x[-1 - k] for k in range(1, half + 1)]
    padded = np.concatenate([left, x, right])
    t = np.arange(window) - half
    return np.array([np.polyval(np.polyfit(t, padded[i:i + window], 1), 0.0) for i in range(x.size)])


class TestSavitzkyGolay:
    def test_constant(self):
        assert np.allclose(savitzky_golay([5, 5, 5, 5, 5], 5, 1), 5.0, atol=1e-12)

    def test_ramp(self):
        ramp = np.arange(7.0)
        assert np.max(np.abs(savitzky_golay(ramp, 5, 1) - ramp)) < 1e-12

    def test_impulse_centre(self):
        out = savitzky_golay([0, 0, 10, 0, 0], 5, 1)
        assert out[2] == pytest.approx(2.0, abs=1e-12)

    def test_matches_line_fit_oracle(self):
        x = np.random.default_rng(0).normal(size=40)
        assert np.allclose(savitzky_golay(x, 11, 1), _sg_oracle(x, 11), atol=1e-12)

    @pytest.mark.parametrize("window", [4, 0, -3])
    def test_bad_window(self, window):
        with pytest.raises(ValueError, match="odd"):
            savitzky_golay(np.zeros(20), window, 1)

    def test_window_longer_than_sequence(self):
        with pytest.raises(ValueError, match="exceeds"):
            savitzky_golay(np.zeros(5), 11, 1)

    def test_order_too_large(self):
        with pytest.raises(ValueError):
            savitzky_golay(np.zeros(20), 5, 5)

    @settings(max_examples=60, deadline=None)
    @given(finite, finite, st.integers(11, 200), st.sampled_from([3, 5, 11]))
    def test_affine_identity(self, a, b, n, window):
        x = a + b * np.arange(n)
        assert np.max(np.abs(savitzky_golay(x, window, 1) - x)) <= 1e-10 * max(1.0, np.abs(x).max())


class TestMinMax:
    @pytest.mark.parametrize("x, want", [
        ([0, 5, 10], [0, 0.5, 1]),
        ([7, 7, 7], [0, 0, 0]),
        ([-2, 0, 2], [0, 0.5, 1]),
    ])
    def test_examples(self, x, want):
        assert np.allclose(min_max_scale(x), want, atol=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            min_max_scale([])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=50))
    def test_range_order_idempotence(self, values):
        x = np.array(values)
        y = min_max_scale(x)
        assert np.all((y >= 0) & (y <= 1))
        order = np.argsort(x, kind="stable")
        assert np.all(np.diff(y[order]) >= 0)
        assert np.max(np.abs(min_max_scale(y) - y)) <= 1e-12


class TestUpsample:
    def test_length(self):
        out = upsample(Channel("EDA", 4.0, np.arange(5.0)))
        assert out.samples.size == 80 and out.sample_rate_hz == 64

    def test_first_interpolated_value(self):
        out = upsample(Channel("EDA", 4.0, [0.0, 1.0]))
        assert out.samples[1] == pytest.approx(1 / 16, abs=1e-15)
        # interior grid 16*(n-1)+1 values, then the last value held
        assert np.allclose(out.samples[:17], np.arange(17) / 16)
        assert np.all(out.samples[16:] == 1.0)

    def test_constant(self):
        assert np.all(upsample(Channel("TEMP", 4.0, np.full(6, 33.2))).samples == 33.2)

    def test_same_rate_copy(self):
        ch = Channel("BVP", 64.0, np.arange(3.0))
        assert np.array_equal(upsample(ch).samples, ch.samples)

    def test_non_integer_ratio(self):
        with pytest.raises(ValueError, match="integer multiple"):
            upsample(Channel("EDA", 4.0, np.zeros(3)), 30)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=40))
    def test_anchors(self, values):
        out = upsample(Channel("EDA", 4.0, values)).samples
        assert np.array_equal(out[::16], np.array(values, dtype=np.float64))


def _prepared(labels_and_lengths, rate=64):
    """Prepared session whose intervals have the given sample lengths, back to back."""
    n = sum(length for _, length in labels_and_lengths)
    intervals, t = [], 0
    for label, length in labels_and_lengths:
        intervals.append(LabelInterval(label, t / rate, (t + length) / rate))
        t += length
    data = np.linspace(0, 1, n * 3).reshape(n, 3)
    return PreparedSession("X", data, intervals, rate)


class TestWindows:
    @pytest.mark.parametrize("length, delta, want", [(600, 600, 1), (1000, 600, 401), (599, 600, 0)])
    def test_count_examples(self, length, delta, want):
        assert windows_per_run(length, delta, 1) == want

    def test_count_per_run(self):
        ws = make_windows(_prepared([("A", 1000), ("B", 599), ("A", 700)]), 600)
        assert len(ws) == 401 + 0 + 101
        assert ws.windows().shape == (502, 600, 3)

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(1, 300), min_size=1, max_size=5), st.integers(1, 120), st.integers(1, 7))
    def test_count_formula(self, lengths, delta, step):
        runs = [(f"c{i % 2}", n) for i, n in enumerate(lengths)]
        want = sum((n - delta) // step + 1 for n in lengths if n >= delta)
        session = _prepared(runs)
        if want == 0:
            with pytest.raises(EmptyWindowSetError):
                make_windows(session, delta, step)
        else:
            assert len(make_windows(session, delta, step)) == want

    def test_purity(self):
        session = _prepared([("A", 90), ("B", 50), ("A", 70)])
        ws = make_windows(session, 40)
        owner = session.interval_index()
        for start, label in zip(ws.starts, ws.labels):
            covered = owner[start:start + ws.delta]
            assert np.all(covered == covered[0]) and covered[0] >= 0
            assert session.classes[label] == session.intervals[covered[0]].label

    def test_unlabelled_gap(self):
        data = np.zeros((300, 3))
        session = PreparedSession("X", data, [LabelInterval("A", 0.0, 1.0), LabelInterval("B", 2.0, 4.0)], 64)
        assert [(a, b) for a, b, _ in label_runs(session)] == [(0, 64), (128, 256)]

    def test_windows_are_slices(self):
        session = _prepared([("A", 50)])
        ws = make_windows(session, 10)
        assert np.array_equal(ws.windows([3])[0], session.data[3:13])

    def test_empty(self):
        with pytest.raises(EmptyWindowSetError):
            make_windows(_prepared([("A", 10)]), 11)


class TestPreprocess:
    def test_shapes_and_range(self):
        session = generate(separable_specs(30.0, 2), rng_seed=1, noise_sigma=0.05)
        prep = preprocess(session)
        assert prep.data.shape == (60 * 64, 3)
        assert np.all((prep.data >= 0) & (prep.data <= 1))
        assert prep.classes == ["baseline", "stress"]

    def test_crops_to_common_span(self):
        ch = {
            "EDA": Channel("EDA", 4.0, np.arange(40.0), 0.0),
            "BVP": Channel("BVP", 64.0, np.arange(640.0), 1.0),
            "TEMP": Channel("TEMP", 4.0, np.arange(48.0), 0.5),
        }
        prep = preprocess(SignalSession("X", ch, [LabelInterval("A", 0.0, 12.0)]))
        # common span [1, 10] seconds
        assert prep.data.shape[0] == 9 * 64
        assert prep.intervals[0].t_start == 0.0 and prep.intervals[0].t_end == 9.0

    def test_bvp_not_smoothed(self):
        rng = np.random.default_rng(0)
        bvp = rng.normal(size=640)
        ch = {"EDA": Channel("EDA", 4.0, np.arange(40.0)), "BVP": Channel("BVP", 64.0, bvp),
              "TEMP": Channel("TEMP", 4.0, np.arange(40.0))}
        prep = preprocess(SignalSession("X", ch, [LabelInterval("A", 0.0, 10.0)]))
        assert np.allclose(prep.data[:, 1], min_max_scale(bvp), atol=1e-15)


class TestIngest:
    @pytest.fixture
    def subject_dir(self, tmp_path):
        session = generate(separable_specs(12.0, 2), rng_seed=0, noise_sigma=0.01, subject_id="S07")
        return write_e4_csv(session, tmp_path / "S07"), session

    def test_round_trip(self, subject_dir):
        path, session = subject_dir
        back = ingest_e4_csv(path)
        assert back.subject_id == "S07"
        assert set(back.channels) == {"EDA", "BVP", "TEMP"}
        for name, ch in session.channels.items():
            assert np.array_equal(back.channels[name].samples, ch.samples)
            assert back.channels[name].sample_rate_hz == ch.sample_rate_hz
        assert back.intervals == session.intervals

    def test_minimal_fixture(self, tmp_path):
        for name, rate in (("EDA", 4), ("BVP", 64), ("TEMP", 4)):
            (tmp_path / f"{name}.csv").write_text(f"1600000000.000000\n{rate}.000000\n1.0\n2.0\n")
        (tmp_path / "labels.csv").write_text("label,t_start,t_end\nA,0,0.5\n")
        session = ingest_e4_csv(tmp_path)
        assert len(session.channels) == 3
        assert session.channels["BVP"].sample_rate_hz == 64
        assert session.intervals == [LabelInterval("A", 0.0, 0.5)]

    def test_missing_file(self, subject_dir):
        path, _ = subject_dir
        (path / "TEMP.csv").unlink()
        with pytest.raises(MissingFileError, match="TEMP.csv"):
            ingest_e4_csv(path)

    def test_missing_labels(self, subject_dir):
        path, _ = subject_dir
        (path / "labels.csv").unlink()
        with pytest.raises(MissingFileError, match="labels.csv"):
            ingest_e4_csv(path)

    @pytest.mark.parametrize("rate_line", ["sixty-four", "32.000000"])
    def test_bad_rate_line(self, subject_dir, rate_line):
        path, _ = subject_dir
        lines = (path / "BVP.csv").read_text().splitlines()
        lines[1] = rate_line
        (path / "BVP.csv").write_text("\n".join(lines))
        with pytest.raises(RateLineError):
            ingest_e4_csv(path)

    def test_overlap_names_pair(self, subject_dir):
        path, _ = subject_dir
        (path / "labels.csv").write_text("label,t_start,t_end\nA,0,5\nB,4,8\n")
        with pytest.raises(OverlappingIntervalsError, match=r"A \[0.0, 5.0\).*B \[4.0, 8.0\)"):
            ingest_e4_csv(path)

    def test_errors_are_distinct(self):
        kinds = {MissingFileError, RateLineError, OverlappingIntervalsError}
        assert len(kinds) == 3 and all(issubclass(k, DataError) for k in kinds)

    def test_start_offsets(self, tmp_path):
        for name, rate, start in (("EDA", 4, 100.0), ("BVP", 64, 102.0), ("TEMP", 4, 101.0)):
            (tmp_path / f"{name}.csv").write_text(f"{start}\n{rate}\n" + "1.0\n" * 8)
        (tmp_path / "labels.csv").write_text("label,t_start,t_end\nA,0,1\n")
        session = ingest_e4_csv(tmp_path)
        assert [session.channels[c].start_time for c in ("EDA", "BVP", "TEMP")] == [0.0, 2.0, 1.0]


class TestCache:
    def test_round_trip_and_bytes(self, tmp_path, two_class_session, two_class_windows):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_cache(two_class_session, two_class_windows, a)
        prep, ws = load_cache(a)
        save_cache(prep, ws, b)
        assert a.read_bytes() == b.read_bytes()
        assert np.array_equal(ws.windows(), two_class_windows.windows())
        assert np.array_equal(ws.labels, two_class_windows.labels)

    def test_rejects_other_format(self, tmp_path):
        (tmp_path / "c.json").write_text('{"format": "nope"}')
        with pytest.raises(DataError, match="format"):
            load_cache(tmp_path / "c.json")
