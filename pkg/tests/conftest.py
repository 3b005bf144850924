import time

import numpy as np
import pytest

from scenariogan.datapipe import SyntheticConfig, fit_scaler_on_split, rolling_windows, split, synthesize_dataset
from scenariogan.gan import CriticSpec, GeneratorSpec, TrainConfig, build_model, train


def tiny_specs(n_sensors=2, window=6):
    g = GeneratorSpec(n_sensors=n_sensors, window=window, recurrent_hidden=(8,), noise_hidden=8, dense_sizes=(8,),
                      embedding_dim=3)
    c = CriticSpec(n_sensors=n_sensors, window=window, channels=(4, 6), dense_sizes=(8,), embedding_dim=3)
    return g, c


class Desk:
    """The desk-scale synthetic setup: 3 sensors x 5000 steps, W=24, seed 0."""

    def __init__(self, sensors=3, steps=5000, window=24, seed=0):
        self.dataset = synthesize_dataset(SyntheticConfig(sensors=sensors, steps=steps, seed=seed))
        self.windows = split(rolling_windows(self.dataset, window), seed=seed)
        self.scaler = fit_scaler_on_split(self.windows)
        self.scaled = self.windows.scaled(self.scaler)
        self.train = self.scaled.select("train")


@pytest.fixture(scope="session")
def small_data():
    return Desk(sensors=2, steps=400, window=6)


@pytest.fixture
def tiny_model(small_data):
    def make(seed=0, **cfg):
        g, c = tiny_specs()
        config = TrainConfig(batch_size=8, n_critic=2, iterations=0, seed=seed, **cfg)
        return build_model(g, c, config, small_data.dataset.sensors, small_data.scaler)
    return make


@pytest.fixture(scope="session")
def desk():
    return Desk()


@pytest.fixture(scope="session")
def trained_desk(desk):
    """Default architecture and the winning toggles, 2000 generator iterations.

    Shared by the anomaly and training-health checks; ``seconds`` is the
    training wall time so each criterion can report its full cost.
    """
    sensors = desk.dataset.sensors
    model = build_model(GeneratorSpec(n_sensors=len(sensors)), CriticSpec(n_sensors=len(sensors)),
                        TrainConfig(iterations=2000, optimizer="adabelief", ttur=True), sensors, desk.scaler)
    t0 = time.perf_counter()
    train(model, desk.train)
    return model, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------- acceptance summary lines

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    n = int(name.split("_")[2])
    detail = dict(report.user_properties).get("detail", "")
    if report.failed:
        _CRITERIA[n] = ("FAIL", detail)
    elif report.when == "call" and n not in _CRITERIA:
        _CRITERIA[n] = ("PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f"  ({detail})" if detail else ""))
