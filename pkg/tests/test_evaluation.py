import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenariogan.datapipe import DataError, WindowSet
from scenariogan.evaluation.metrics import (
    JointHistogram,
    MetricError,
    derivative_stats,
    detect_anomalies,
    kl_divergence,
    kl_from_probabilities,
    mse,
    pearson,
    t_interval,
    union_edges,
)
from scenariogan.evaluation.protocol import score_arrays
from scenariogan.evaluation.report import SCHEMA, EvalReport
from scenariogan.evaluation.tstr import (
    IsolationError,
    PredictorSpec,
    assert_isolated,
    column_name,
    columns_for,
    run_study,
)

# ---------------------------------------------------------------- KL


def test_kl_two_bins():
    # 0.5 log2(0.5/0.75) + 0.5 log2(0.5/0.25)
    assert abs(kl_from_probabilities([0.5, 0.5], [0.75, 0.25]) - 0.20752) < 1e-5


def test_kl_is_asymmetric():
    # 0.75 log2(1.5) + 0.25 log2(0.5), computed directly
    rev = kl_from_probabilities([0.75, 0.25], [0.5, 0.5])
    assert abs(rev - 0.188722) < 1e-6
    assert abs(rev - 0.20752) > 1e-3


def test_kl_identical_samples_zero(rng):
    x = rng.normal(size=(500, 2))
    assert kl_divergence(x, x) == 0.0


def test_kl_zero_mass_is_inf():
    assert kl_from_probabilities([0.5, 0.5], [1.0, 0.0]) == float("inf")
    assert kl_from_probabilities([1.0, 0.0], [0.5, 0.5]) == 1.0


def test_kl_shape_mismatch():
    with pytest.raises(MetricError):
        kl_from_probabilities([1.0], [0.5, 0.5])


def test_kl_rejects_nonfinite():
    with pytest.raises(MetricError, match="non-finite"):
        kl_divergence(np.array([[0.0, np.nan]]), np.zeros((3, 2)))


def test_histogram_smoothing():
    h = JointHistogram(union_edges(np.zeros((1, 2)), np.ones((1, 2)), 2), np.array([[1.0, 0.0], [0.0, 0.0]]), 1e-6)
    p = h.probabilities()
    assert abs(p.sum() - 1) < 1e-15 and np.all(p > 0)
    assert p[0, 0] == pytest.approx((1 + 1e-6) / (1 + 4e-6), abs=1e-15)


def test_union_edges_cover_both():
    a, b = np.array([[0.0, 5.0]]), np.array([[3.0, -1.0]])
    ex, ey = union_edges(a, b, 4)
    assert (ex[0], ex[-1], ey[0], ey[-1]) == (0.0, 3.0, -1.0, 5.0) and len(ex) == 5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_kl_nonnegative(seed, shift):
    rng = np.random.default_rng(seed)
    g = rng.normal(shift, 1.0, (300, 2))
    r = rng.normal(0.0, rng.uniform(0.5, 2.0), (400, 2))
    assert kl_divergence(g, r) >= 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_refinement_monotone(seed):
    # the 2 x 2 grid is a coarsening of the 32 x 32 grid on the same union range
    rng = np.random.default_rng(seed)
    g = rng.normal(rng.uniform(-1, 1), 1.0, (300, 2))
    r = rng.normal(0.0, 1.0, (300, 2))
    assert kl_divergence(g, r, bins=32, smoothing=0) >= kl_divergence(g, r, bins=2, smoothing=0) - 1e-9


# ---------------------------------------------------------------- MSE


def test_mse_hand_case():
    assert mse([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 1.0, 5.0])[0] == 2.5


def test_mse_constant_offset(rng):
    x = rng.normal(size=(50, 2))
    assert np.allclose(mse(x + 0.3, x), 0.09, atol=1e-14)


def test_mse_bias_variance_split(rng):
    t = rng.normal(size=1000)
    p = t + rng.normal(0.4, 0.7, 1000)
    e = p - t
    assert mse(p, t)[0] == pytest.approx(e.mean() ** 2 + e.var(), rel=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(MetricError):
        mse(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- derivative thresholds


def test_derivative_alternating():
    a = 0.7
    seq = np.column_stack([np.tile([0.0, a], 50), np.tile([0.0, 2 * a], 50)])
    stats = derivative_stats([seq])
    # differences alternate +a, -a with mean ~0: population sigma is a (99 differences, one extra +a)
    d = np.diff(seq, axis=0)
    assert np.allclose(stats.sigma, d.std(axis=0), atol=0)
    assert np.allclose(stats.thresholds, 5 * stats.sigma)
    assert stats.sigma[0] == pytest.approx(a, rel=1e-3)


def test_derivative_pools_within_sequences():
    # no difference is taken across the boundary between the two sequences
    stats = derivative_stats([np.zeros((5, 2)), np.full((5, 2), 100.0)])
    assert np.all(stats.sigma == 0) and np.all(stats.degenerate) and stats.n == 8


def test_derivative_needs_two_records():
    with pytest.raises(MetricError):
        derivative_stats([np.zeros((1, 2))])


def test_detection_strict_threshold():
    scen = np.array([[[1.0, 0.0], [2.5, 0.0]]])
    counts = detect_anomalies(scen, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    # first step changes by exactly the threshold (not counted), second by 1.5
    assert counts.tolist() == [[0, 0], [1, 0]]


def test_detection_constant_scenarios():
    scen = np.full((10, 24, 2), 3.0)
    assert detect_anomalies(scen, np.array([3.0, 3.0]), np.zeros(2)).sum() == 0


# ---------------------------------------------------------------- Pearson and intervals


def test_pearson_extremes():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 1) == 1.0
    assert pearson(x, -x) == -1.0


def test_pearson_independent(rng):
    assert abs(pearson(rng.normal(size=100_000), rng.normal(size=100_000))) < 0.02


def test_pearson_zero_variance():
    with pytest.raises(MetricError, match="zero variance"):
        pearson(np.ones(5), np.arange(5.0))


def test_t_interval_hand_case():
    # mean 2, s 1, n 3; with 2 degrees of freedom the t quantile is (2p - 1) / sqrt(2p(1 - p))
    t = 0.95 / np.sqrt(2 * 0.975 * 0.025)
    m, h = t_interval([1.0, 2.0, 3.0])
    assert m == 2.0 and h == pytest.approx(t / np.sqrt(3), rel=1e-9)
    assert np.isnan(t_interval([4.0])[1])


# ---------------------------------------------------------------- reports


def test_score_arrays_identical():
    truth = np.random.default_rng(1).normal(size=(20, 6, 2))
    s = score_arrays(truth, truth, truth[:, 0])
    assert s.kl_bits == 0.0 and np.all(s.mse == 0)


def test_report_round_trip(tmp_path, rng):
    real = rng.normal(size=(30, 8, 2))
    gen = real + rng.normal(0, 0.1, real.shape)
    rep = EvalReport.build(gen, real, last_values=real[:, 0])
    paths = rep.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["schema"] == SCHEMA
    assert doc["kl_bits"] == rep.kl_bits and doc["n_windows"] == 30
    assert set(doc["mse"]) == {"temperature", "humidity"}
    assert doc["derivatives"]["k"] == 5.0
    assert {p.name for p in paths} >= {"report.txt", "histogram_generated.csv", "derivative_histogram.csv"}
    assert "KL divergence" in (tmp_path / "report.txt").read_text()
    grid = (tmp_path / "histogram_real.csv").read_text().splitlines()
    assert len(grid) == 1 + 32 * 32


def test_report_unpaired_has_no_mse(rng):
    rep = EvalReport.build(rng.normal(size=(5, 4, 2)), rng.normal(size=(7, 4, 2)))
    assert np.all(np.isnan(rep.mse)) and rep.to_dict()["mse"]["temperature"] is None


# ---------------------------------------------------------------- TSTR


@pytest.fixture(scope="module")
def tstr_windows(small_data):
    return small_data.scaled.select("train"), small_data.scaled.select("test")


def _spec(**kw):
    base = dict(window=6, hidden=(8,), epochs=1, batch_size=32, repeats=2)
    base.update(kw)
    return PredictorSpec(**base)


def _as_synthetic(ws: WindowSet) -> WindowSet:
    return WindowSet(ws.inputs.copy(), ws.targets.copy(), ws.sensor_ids.copy(), np.full(len(ws), -1), ws.sensors)


def test_tstr_equals_trtr_on_real_copy(tstr_windows):
    train, test = tstr_windows
    table = run_study(train, test, _as_synthetic(train), _spec())
    assert np.array_equal(table.columns["TSTR"].mse_scaled, table.columns["TRTR"].mse_scaled)


def test_trtr_deterministic(tstr_windows):
    train, test = tstr_windows
    a = run_study(train, test, _as_synthetic(train), _spec())
    b = run_study(train, test, _as_synthetic(train), _spec())
    assert np.array_equal(a.columns["TRTR"].mse_scaled, b.columns["TRTR"].mse_scaled)
    assert not np.array_equal(a.columns["TRTR"].mse_scaled[0], a.columns["TRTR"].mse_scaled[1])


def test_tstr_factory_called_per_repeat(tstr_windows):
    train, test = tstr_windows
    calls = []

    def factory(frac, r):
        calls.append((frac, r))
        return _as_synthetic(train)
    table = run_study(train, test, factory, _spec(), fractions=(0.0, 0.05))
    assert calls == [(0.0, 0), (0.05, 0), (0.0, 1), (0.05, 1)]
    assert list(table.columns) == [c for c, _, _ in columns_for((0.0, 0.05))]
    assert table.sizes["TSRTR"] == 2 * len(train)


def test_tstr_empty_corpus(tstr_windows):
    train, test = tstr_windows
    with pytest.raises(DataError, match="empty"):
        run_study(train, test, _as_synthetic(train).subset(np.zeros(len(train), bool)), _spec())


def test_isolation_by_position(tstr_windows):
    train, test = tstr_windows
    with pytest.raises(IsolationError, match="positions"):
        assert_isolated(test, {"leaky": test})


def test_isolation_by_value(tstr_windows):
    _, test = tstr_windows
    with pytest.raises(IsolationError, match="verbatim"):
        assert_isolated(test, {"copied": _as_synthetic(test)})


def test_column_names():
    assert column_name("TSTR", 0.05) == "TSTR (5% anomalies)"
    assert [c for c, _, _ in columns_for((0.0, 0.05, 0.1))] == [
        "TSTR", "TSTR (5% anomalies)", "TSTR (10% anomalies)",
        "TSRTR", "TSRTR (5% anomalies)", "TSRTR (10% anomalies)", "TRTR"]


def test_table_outputs(tstr_windows, small_data):
    train, test = tstr_windows
    table = run_study(train, test, _as_synthetic(train), _spec(), scaler=small_data.scaler)
    doc = table.to_dict()
    assert set(doc["columns"]) == {"TSTR", "TSRTR", "TRTR"}
    assert len(doc["columns"]["TRTR"]["physical"]["humidity"]["repeats"]) == 2
    assert "MSE temperature" in table.to_text()
