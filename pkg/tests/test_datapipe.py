import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenariogan.datapipe import (
    DataError,
    SensorSeries,
    SyntheticConfig,
    TimeSeriesDataset,
    export_csv,
    fit_scaler,
    fit_scaler_on_split,
    future_truth,
    ingest_csv,
    rolling_windows,
    split,
    synthesize_dataset,
)
from scenariogan.evaluation.metrics import pearson

HEADER = "timestamp,sensor_id,temperature,humidity\n"


def _write(tmp_path, body, name="d.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return path


def _series(values, sid="s0", start=0):
    values = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
    if values.shape[1] == 1:
        values = np.hstack([values, np.full_like(values, 50.0)])
    stamps = np.datetime64("2020-01-01T00:00:00", "s") + (start + np.arange(len(values))) * np.timedelta64(600, "s")
    return SensorSeries(sid, stamps, values)


# ---------------------------------------------------------------- CSV


def test_ingest_groups_and_sorts(tmp_path):
    body = "".join(
        f"2020-01-01T00:{10 * i:02d}:00Z,{sid},{20 + i},{40 + i}\n" for i in range(3) for sid in ("b", "a"))
    ds = ingest_csv(_write(tmp_path, body))
    assert ds.sensors == ["a", "b"]
    assert [len(s) for s in ds.series.values()] == [3, 3]
    assert ds.gaps == []


def test_ingest_humidity_out_of_range(tmp_path):
    path = _write(tmp_path, "2020-01-01T00:00:00Z,a,20,50\n2020-01-01T00:10:00Z,a,20,150\n")
    with pytest.raises(DataError, match="line 3.*humidity 150"):
        ingest_csv(path)


def test_ingest_malformed_row(tmp_path):
    path = _write(tmp_path, "2020-01-01T00:00:00Z,a,20\n")
    with pytest.raises(DataError, match="line 2"):
        ingest_csv(path)


def test_ingest_bad_number(tmp_path):
    path = _write(tmp_path, "2020-01-01T00:00:00Z,a,warm,50\n")
    with pytest.raises(DataError, match="line 2"):
        ingest_csv(path)


def test_ingest_non_monotone(tmp_path):
    path = _write(tmp_path, "2020-01-01T00:10:00Z,a,20,50\n2020-01-01T00:00:00Z,a,20,50\n")
    with pytest.raises(DataError, match="line 3.*not after"):
        ingest_csv(path)


def test_ingest_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("time,sensor,t,h\n")
    with pytest.raises(DataError, match="line 1"):
        ingest_csv(path)


def test_ingest_reports_gaps(tmp_path):
    path = _write(tmp_path, "2020-01-01T00:00:00Z,a,20,50\n2020-01-01T00:10:00Z,a,20,50\n"
                            "2020-01-01T01:00:00Z,a,20,50\n")
    ds = ingest_csv(path)
    assert len(ds.gaps) == 1 and ds.gaps[0].index == 2 and ds.gaps[0].seconds == 3000


def test_export_ingest_round_trip(tmp_path):
    ds = synthesize_dataset(SyntheticConfig(sensors=3, steps=200, seed=4))
    path = tmp_path / "x.csv"
    export_csv(ds, path)
    back = ingest_csv(path)
    assert back.sensors == ds.sensors
    for sid in ds.sensors:
        assert np.array_equal(back.series[sid].values, ds.series[sid].values)
        assert np.array_equal(back.series[sid].timestamps, ds.series[sid].timestamps)
    export_csv(back, tmp_path / "y.csv")
    assert (tmp_path / "y.csv").read_bytes() == path.read_bytes()


# ---------------------------------------------------------------- scaler


def test_scaler_endpoints():
    sc = fit_scaler(np.array([[10.0, 0.0], [20.0, 1.0], [30.0, 2.0]]))
    assert sc.scale(np.array([[10.0, 0.0], [20.0, 1.0], [30.0, 2.0]]))[:, 0].tolist() == [-1.0, 0.0, 1.0]


def test_scaler_no_clipping():
    sc = fit_scaler(np.array([[10.0, 0.0], [30.0, 1.0]]))
    assert sc.scale(np.array([35.0, 0.5]))[0] == 1.5


def test_scaler_constant_variable():
    with pytest.raises(DataError, match="constant"):
        fit_scaler(np.array([[1.0, 5.0], [2.0, 5.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_scaler_round_trip(seed):
    rng = np.random.default_rng(seed)
    sc = fit_scaler(rng.normal(20, 5, (50, 2)))
    x = rng.normal(20, 10, (30, 2))
    assert np.allclose(sc.inverse(sc.scale(x)), x, rtol=0, atol=1e-9)


def test_scaler_leakage_canary():
    # block mode: with per-window sampling the train windows already touch every record
    ws = split(rolling_windows(synthesize_dataset(SyntheticConfig(sensors=2, steps=400)), 8), seed=0, mode="block")
    train_only = fit_scaler_on_split(ws)
    seqs = np.concatenate([ws.select("train").sequences(), ws.select("val").sequences()])
    both = fit_scaler(seqs.reshape(-1, 2))
    assert not (np.array_equal(train_only.minimum, both.minimum) and np.array_equal(train_only.maximum, both.maximum))
    assert np.allclose(ws.select("train").scaled(train_only).sequences().min(axis=(0, 1)), -1)


# ---------------------------------------------------------------- windows


def test_window_count():
    ds = TimeSeriesDataset({"s0": _series(np.arange(10.0))})
    ws = rolling_windows(ds, 4)
    assert len(ws) == 6
    assert ws.inputs[0, :, 0].tolist() == [0, 1, 2, 3] and ws.targets[0, 0] == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.data())
def test_window_count_every_width(length, data):
    w = data.draw(st.integers(1, length - 1))
    ds = TimeSeriesDataset({"s0": _series(np.arange(float(length)))})
    assert len(rolling_windows(ds, w)) == length - w


def test_windows_overlap_and_chain():
    ds = synthesize_dataset(SyntheticConfig(sensors=1, steps=60))
    ws = rolling_windows(ds, 5)
    for i in range(len(ws) - 1):
        assert np.array_equal(ws.inputs[i, 1:], ws.inputs[i + 1, :-1])
        chained = np.vstack([ws.inputs[i, -1:], ws.targets[i:i + 1]])
        assert np.array_equal(chained, ws.inputs[i + 1, -2:])


def test_short_sensor_skipped_with_warning():
    ds = TimeSeriesDataset({"a": _series(np.arange(3.0), "a"), "b": _series(np.arange(10.0), "b")})
    with pytest.warns(RuntimeWarning, match="sensor a"):
        ws = rolling_windows(ds, 4)
    assert set(ws.sensor_ids.tolist()) == {1}


def test_windows_never_cross_gaps():
    values = np.column_stack([np.arange(12.0), np.full(12, 50.0)])
    stamps = np.datetime64("2020-01-01T00:00:00", "s") + np.r_[np.arange(6), np.arange(8, 14)] * np.timedelta64(600, "s")
    ds = TimeSeriesDataset({"a": SensorSeries("a", stamps, values)})
    ws = rolling_windows(ds, 3)
    assert len(ws) == 6
    assert ws.starts.tolist() == [0, 1, 2, 6, 7, 8]


def test_future_truth_alignment():
    ds = TimeSeriesDataset({"a": _series(np.arange(20.0), "a")})
    ws = rolling_windows(ds, 4)
    keep, truth = future_truth(ds, ws, 3)
    assert keep.sum() == 20 - 4 - 3 + 1
    assert truth[0, :, 0].tolist() == [4, 5, 6]


# ---------------------------------------------------------------- split


def test_split_fractions():
    ds = TimeSeriesDataset({"a": _series(np.arange(101.0), "a")})
    counts = split(rolling_windows(ds, 1), seed=0).counts()
    assert counts == {"train": 75, "val": 10, "test": 15}


def test_split_deterministic_and_stratified():
    ws = rolling_windows(synthesize_dataset(SyntheticConfig(sensors=4, steps=300)), 10)
    a, b = split(ws, seed=5), split(ws, seed=5)
    assert np.array_equal(a.split, b.split)
    assert not np.array_equal(a.split, split(ws, seed=6).split)
    for code in range(4):
        n = np.sum(ws.sensor_ids == code)
        mine = a.split[a.sensor_ids == code]
        for name, frac in zip(("train", "val", "test"), (0.75, 0.10, 0.15)):
            assert abs(np.sum(mine == name) - frac * n) <= 1


def test_block_split_shares_no_record():
    ws = rolling_windows(synthesize_dataset(SyntheticConfig(sensors=2, steps=300)), 10)
    out = split(ws, seed=0, mode="block")
    for code in range(2):
        spans = {}
        for name in ("train", "val", "test"):
            sel = (out.split == name) & (out.sensor_ids == code)
            starts = out.starts[sel]
            spans[name] = set(range(starts.min(), starts.max() + 11))
        assert not spans["train"] & spans["val"] and not spans["val"] & spans["test"]


def test_split_rejects_bad_fractions():
    ws = rolling_windows(synthesize_dataset(SyntheticConfig(sensors=1, steps=50)), 5)
    with pytest.raises(ValueError):
        split(ws, fractions=(0.5, 0.5, 0.5))


# ---------------------------------------------------------------- synthetic data


def test_synthetic_degenerate_coupling():
    cfg = SyntheticConfig(sensors=2, steps=100, humidity_slope=0.0, humidity_offset_std=0.0, humidity_noise_scale=0.0)
    ds = synthesize_dataset(cfg)
    assert np.all(ds.pooled_values()[:, 1] == cfg.humidity_intercept)


def test_synthetic_white_noise_temperature():
    cfg = SyntheticConfig(sensors=1, steps=20_000, ar_coef=0.0, diurnal_amplitude=0.0)
    t = synthesize_dataset(cfg).pooled_values()[:, 0]
    d = t - t.mean()
    assert abs(np.dot(d[:-1], d[1:]) / np.dot(d, d)) < 0.05


def test_synthetic_default_correlation():
    ds = synthesize_dataset(SyntheticConfig())
    assert len(ds.sensors) == 35 and all(len(s) == 5000 for s in ds.series.values())
    assert -0.864 <= pearson(ds.pooled_values()) <= -0.704


def test_synthetic_deterministic_bytes(tmp_path):
    cfg = SyntheticConfig(sensors=3, steps=300, seed=9)
    export_csv(synthesize_dataset(cfg), tmp_path / "a.csv")
    export_csv(synthesize_dataset(cfg), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synthetic_humidity_clipped_over_seeds():
    for seed in range(100):
        h = synthesize_dataset(SyntheticConfig(sensors=3, steps=500, seed=seed)).pooled_values()[:, 1]
        assert h.min() >= 0.0 and h.max() <= 100.0


def test_synthetic_cadence():
    ds = synthesize_dataset(SyntheticConfig(sensors=1, steps=4))
    s = next(iter(ds.series.values()))
    assert np.all(np.diff(s.timestamps) == np.timedelta64(600, "s"))


def test_synthetic_rejects_bad_config():
    with pytest.raises(ValueError):
        synthesize_dataset(SyntheticConfig(ar_coef=1.0))
