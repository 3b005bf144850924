"""Autoregressive scenario rollout with on-demand anomalies.

A rollout repeatedly asks the generator for the next step, appends the
prediction to the conditioning window and drops the oldest step. Latent
noise is N(0, 1) at every step except the anomaly step, where it is drawn
with standard deviation ``sigma``. Noise is always drawn as a standard
normal block and the anomaly row is multiplied by ``sigma``, so
``sigma == 1`` gives bit-identical output to normal generation.

All values are in the scaled domain unless a method says otherwise.
Generated values are never clipped.
"""

from __future__ import annotations

import contextlib
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import VARIABLES, DataError, ScalerParams, WindowSet, format_number
from .gan.training import GanModel
from .numcore.tensor import no_grad

SCENARIO_HEADER = ["sample_id", "scenario_id", "sensor_id", "step", *VARIABLES]
META_FORMAT = "scenariogan-scenarios/1"


@dataclass(frozen=True)
class AnomalySpec:
    """Noise scale ``sigma`` applied at rollout step ``step`` (None: no anomaly)."""

    step: int | None = None
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"anomaly sigma must be > 0, got {self.sigma}")
        if self.step is not None and self.step < 0:
            raise ValueError(f"anomaly step must be >= 0, got {self.step}")

    def check(self, length: int) -> None:
        if self.step is not None and self.step >= length:
            raise ValueError(f"anomaly step {self.step} outside rollout of length {length}")

    def to_dict(self) -> dict:
        return {"step": self.step, "sigma": self.sigma}


NORMAL = AnomalySpec()


def scenario_seed(master: int, index: int) -> np.random.SeedSequence:
    """Counter-based seed of scenario ``index``; independent of how many are generated."""
    return np.random.SeedSequence(master, spawn_key=(index,))


def _as_seed(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def draw_noise(seed, length: int, dim: int, anomaly: AnomalySpec = NORMAL) -> np.ndarray:
    z = np.random.default_rng(_as_seed(seed)).standard_normal((length, dim))
    if anomaly.step is not None:
        z[anomaly.step] *= anomaly.sigma
    return z


@contextlib.contextmanager
def _eval_mode(model: GanModel):
    was_training = model.generator.training
    model.generator.eval()
    try:
        yield
    finally:
        model.generator.train(was_training)


def _sensor_code(model: GanModel, sensor) -> int:
    if isinstance(sensor, (int, np.integer)):
        code = int(sensor)
        if not 0 <= code < len(model.sensors):
            raise DataError(f"sensor code {code} outside 0..{len(model.sensors) - 1}")
        return code
    try:
        return model.sensors.index(sensor)
    except ValueError:
        raise DataError(f"model was not trained on sensor {sensor!r}") from None


def _check_history(model: GanModel, history: np.ndarray) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    spec = model.gen_spec
    if history.shape[-2:] != (spec.window, spec.n_vars):
        raise ValueError(f"history must end in ({spec.window}, {spec.n_vars}), got {history.shape}")
    return history


def rollout_batch(model: GanModel, histories, codes, noise, trace: list | None = None) -> np.ndarray:
    """Roll B windows forward with per-step noise (B, L, noise_dim) -> (B, L, V).

    If ``trace`` is a list, the generator input of every step is appended to it.
    """
    hist = _check_history(model, histories).copy()
    codes = np.asarray(codes, dtype=np.int64)
    noise = np.asarray(noise, dtype=np.float64)
    batch, length = noise.shape[:2]
    out = np.empty((batch, length, model.gen_spec.n_vars))
    with _eval_mode(model), no_grad():
        for t in range(length):
            if trace is not None:
                trace.append(hist.copy())
            pred = model.generator(hist, codes, noise[:, t]).data
            out[:, t] = pred
            hist = np.concatenate([hist[:, 1:], pred[:, None, :]], axis=1)
    return out


def step(model: GanModel, history, sensor, z) -> np.ndarray:
    """One generator call: next-step vector for a single (W, V) history."""
    history = _check_history(model, history)
    if history.ndim != 2:
        raise ValueError("step expects a single (W, V) history")
    code = _sensor_code(model, sensor)
    z = np.asarray(z, dtype=np.float64).reshape(1, 1, -1)
    return rollout_batch(model, history[None], [code], z)[0, 0]


def rollout(model: GanModel, history, sensor, length: int, anomaly: AnomalySpec = NORMAL,
            seed=0, trace: list | None = None) -> np.ndarray:
    """One scenario of ``length`` steps as an (L, V) array."""
    if length < 1:
        raise ValueError("rollout length must be >= 1")
    anomaly.check(length)
    history = _check_history(model, history)
    z = draw_noise(seed, length, model.gen_spec.noise_dim, anomaly)
    return rollout_batch(model, history[None], [_sensor_code(model, sensor)], z[None], trace)[0]


@dataclass
class ScenarioBatch:
    history: np.ndarray  # (W, V)
    sensor_id: str
    scenarios: np.ndarray  # (S, L, V)
    anomaly: AnomalySpec
    master_seed: int
    scaler: ScalerParams | None = None

    @property
    def seeds(self) -> list[tuple[int, int]]:
        """(master seed, scenario index) pairs feeding :func:`scenario_seed`."""
        return [(self.master_seed, j) for j in range(len(self.scenarios))]

    def physical(self) -> np.ndarray:
        if self.scaler is None:
            raise DataError("batch has no scaler; physical units unavailable")
        return self.scaler.inverse(self.scenarios)

    def physical_history(self) -> np.ndarray:
        if self.scaler is None:
            raise DataError("batch has no scaler; physical units unavailable")
        return self.scaler.inverse(self.history)


def generate_scenarios(model: GanModel, history, sensor, n_scenarios: int, length: int,
                       anomaly: AnomalySpec = NORMAL, seed: int = 0) -> ScenarioBatch:
    """S rollouts from one window; scenario j uses ``scenario_seed(seed, j)``."""
    if n_scenarios < 1 or length < 1:
        raise ValueError("n_scenarios and length must be >= 1")
    anomaly.check(length)
    history = _check_history(model, history)
    code = _sensor_code(model, sensor)
    dim = model.gen_spec.noise_dim
    z = np.stack([draw_noise(scenario_seed(seed, j), length, dim, anomaly) for j in range(n_scenarios)])
    out = rollout_batch(model, np.repeat(history[None], n_scenarios, axis=0), [code] * n_scenarios, z)
    return ScenarioBatch(history.copy(), model.sensors[code], out, anomaly, seed, model.scaler)


# ---------------------------------------------------------------- bulk corpora


@dataclass
class ScenarioCorpus:
    """N conditioning windows with S generated continuations each."""

    histories: np.ndarray  # (N, W, V) scaled
    sensor_ids: np.ndarray  # (N,) codes into ``sensors``
    starts: np.ndarray  # (N,) start index of each conditioning window
    scenarios: np.ndarray  # (N, S, L, V) scaled
    anomaly_steps: np.ndarray  # (N, S); -1 where the scenario has no anomaly
    anomaly_sigma: float
    seed: int
    sensors: list[str]
    scaler: ScalerParams | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.scenarios.shape

    @property
    def anomaly_fraction(self) -> float:
        return float(np.mean(self.anomaly_steps >= 0)) if self.anomaly_steps.size else 0.0

    def physical(self) -> np.ndarray:
        if self.scaler is None:
            raise DataError("corpus has no scaler; physical units unavailable")
        return self.scaler.inverse(self.scenarios)

    def to_windows(self) -> WindowSet:
        """Training windows whose targets are generated steps.

        Each trajectory is the conditioning window followed by its L
        generated steps; every window of width W ending just before a
        generated step becomes one (input, target) pair, giving N * S * L
        windows. ``starts`` is -1: these windows have no position in any
        real series.
        """
        n, s, length, v = self.scenarios.shape
        w = self.histories.shape[1]
        full = np.concatenate([np.repeat(self.histories[:, None], s, axis=1), self.scenarios], axis=2)
        full = full.reshape(n * s, w + length, v)
        view = np.lib.stride_tricks.sliding_window_view(full, w + 1, axis=1)[:, :length]  # (NS, L, V, W+1)
        seq = view.transpose(0, 1, 3, 2).reshape(-1, w + 1, v)
        ids = np.repeat(self.sensor_ids, s * length)
        return WindowSet(np.ascontiguousarray(seq[:, :w]), np.ascontiguousarray(seq[:, w]), ids,
                         np.full(len(seq), -1, dtype=np.int64), self.sensors)


def bulk_generate(model: GanModel, windows: WindowSet, n_samples: int, n_scenarios: int, length: int,
                  seed: int = 0, anomaly_fraction: float = 0.0, anomaly_sigma: float = 8.0,
                  chunk: int = 2048) -> ScenarioCorpus:
    """Generate ``n_samples`` x ``n_scenarios`` trajectories from scaled windows.

    Conditioning windows are drawn at random from ``windows`` (with
    replacement only when more samples than windows are requested). A
    fraction ``anomaly_fraction`` of all trajectories, chosen at random,
    gets an anomaly of ``anomaly_sigma`` at a uniformly drawn step.
    """
    if min(n_samples, n_scenarios, length) < 1:
        raise ValueError("samples, scenarios and length must be >= 1")
    if not 0.0 <= anomaly_fraction <= 1.0:
        raise ValueError("anomaly_fraction must lie in [0, 1]")
    if len(windows) == 0:
        raise DataError("no conditioning windows to generate from")
    if list(windows.sensors) != list(model.sensors):
        raise DataError("window sensors do not match the model's sensors")
    picker = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    idx = picker.choice(len(windows), size=n_samples, replace=n_samples > len(windows))
    dim = model.gen_spec.noise_dim
    noise = np.stack([np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, i)))
                      .standard_normal((n_scenarios, length, dim)) for i in range(n_samples)])
    steps = np.full(n_samples * n_scenarios, -1, dtype=np.int64)
    n_anom = int(round(anomaly_fraction * n_samples * n_scenarios))
    if n_anom:
        chosen = picker.choice(n_samples * n_scenarios, size=n_anom, replace=False)
        steps[chosen] = picker.integers(0, length, size=n_anom)
    steps = steps.reshape(n_samples, n_scenarios)
    rows, cols = np.nonzero(steps >= 0)
    noise[rows, cols, steps[rows, cols]] *= anomaly_sigma

    hist = windows.inputs[idx]
    codes = windows.sensor_ids[idx]
    flat_hist = np.repeat(hist, n_scenarios, axis=0)
    flat_codes = np.repeat(codes, n_scenarios)
    flat_noise = noise.reshape(n_samples * n_scenarios, length, dim)
    out = np.empty((len(flat_hist), length, model.gen_spec.n_vars))
    for a in range(0, len(flat_hist), chunk):
        out[a:a + chunk] = rollout_batch(model, flat_hist[a:a + chunk], flat_codes[a:a + chunk],
                                         flat_noise[a:a + chunk])
    return ScenarioCorpus(hist.copy(), codes.copy(), windows.starts[idx].copy(),
                          out.reshape(n_samples, n_scenarios, length, -1), steps, float(anomaly_sigma),
                          seed, list(model.sensors), model.scaler)


def corpus_from_batch(batch: ScenarioBatch, sensors: list[str], start: int = -1) -> ScenarioCorpus:
    """Wrap a single-window batch as a one-sample corpus (for export)."""
    s = len(batch.scenarios)
    steps = np.full((1, s), -1 if batch.anomaly.step is None else batch.anomaly.step, dtype=np.int64)
    return ScenarioCorpus(batch.history[None], np.array([sensors.index(batch.sensor_id)]), np.array([start]),
                          batch.scenarios[None], steps, batch.anomaly.sigma, batch.master_seed,
                          list(sensors), batch.scaler)


# ---------------------------------------------------------------- CSV export


def write_csv(corpus: ScenarioCorpus, path, meta: dict | None = None) -> Path:
    """Write generated steps in physical units plus a ``<path>.meta.json`` sidecar.

    Only generated steps are written; the conditioning window of each
    sample is identified in the sidecar by sensor and start index.
    """
    path = Path(path)
    values = corpus.physical() if corpus.scaler is not None else corpus.scenarios
    n, s, length, _ = values.shape
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SCENARIO_HEADER) + "\n")
        for i in range(n):
            sid = corpus.sensors[corpus.sensor_ids[i]]
            for j in range(s):
                for t in range(length):
                    t_val, h_val = values[i, j, t]
                    fh.write(f"{i},{j},{sid},{t},{format_number(t_val)},{format_number(h_val)}\n")
    sidecar = {
        "format": META_FORMAT,
        "samples": n,
        "scenarios": s,
        "length": length,
        "units": "physical" if corpus.scaler is not None else "scaled",
        "seed": corpus.seed,
        "seed_scheme": "SeedSequence(seed, spawn_key=(0, sample)) draws (scenarios, length, noise_dim)",
        "anomaly_sigma": corpus.anomaly_sigma,
        "anomaly_fraction": corpus.anomaly_fraction,
        "anomaly_steps": corpus.anomaly_steps.tolist(),
        "sample_sensors": [corpus.sensors[c] for c in corpus.sensor_ids],
        "sample_starts": corpus.starts.tolist(),
        "scaler": None if corpus.scaler is None else corpus.scaler.to_dict(),
        **corpus.meta,
        **(meta or {}),
    }
    meta_path = sidecar_path(path)
    meta_path.write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return meta_path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


@dataclass
class ScenarioTable:
    sample_id: np.ndarray
    scenario_id: np.ndarray
    sensor_id: np.ndarray  # strings
    step: np.ndarray
    values: np.ndarray  # (rows, V)

    def __len__(self) -> int:
        return len(self.step)

    def cube(self) -> np.ndarray:
        """Values as (N, S, L, V); rows must cover a full grid."""
        n, s, length = self.sample_id.max() + 1, self.scenario_id.max() + 1, self.step.max() + 1
        if n * s * length != len(self):
            raise DataError("scenario rows do not form a complete sample x scenario x step grid")
        out = np.full((n, s, length, self.values.shape[1]), np.nan)
        out[self.sample_id, self.scenario_id, self.step] = self.values
        if np.isnan(out).any():
            raise DataError("duplicate or missing scenario rows")
        return out


def read_csv(path) -> ScenarioTable:
    """Parse a scenario CSV; the header must match ``SCENARIO_HEADER`` exactly."""
    cols: list[list] = [[] for _ in SCENARIO_HEADER]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SCENARIO_HEADER:
            raise DataError(f"line 1: expected header {','.join(SCENARIO_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SCENARIO_HEADER):
                raise DataError(f"line {line}: expected {len(SCENARIO_HEADER)} fields, got {len(row)}")
            try:
                parsed = [int(row[0]), int(row[1]), row[2].strip(), int(row[3]), float(row[4]), float(row[5])]
            except ValueError as exc:
                raise DataError(f"line {line}: {exc}") from None
            for c, v in zip(cols, parsed):
                c.append(v)
    return ScenarioTable(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                         np.array(cols[2], dtype=object), np.array(cols[3], dtype=np.int64),
                         np.stack([np.array(cols[4]), np.array(cols[5])], axis=1) if cols[4]
                         else np.zeros((0, len(VARIABLES))))
