"""Sensor CSV ingestion, min-max scaling, rolling windows and splits.

Also hosts the synthetic telemetry generator used as a stand-in for real
data-center recordings: per-sensor temperature with a hot/cold aisle base
level, a daily cycle and AR(1) noise, and relative humidity coupled
negatively to temperature.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

import numpy as np

VARIABLES = ("temperature", "humidity")
HEADER = ["timestamp", "sensor_id", *VARIABLES]
CADENCE = np.timedelta64(600, "s")
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Gap:
    sensor_id: str
    index: int  # first record after the gap
    seconds: int


@dataclass
class SensorSeries:
    sensor_id: str
    timestamps: np.ndarray  # datetime64[s]
    values: np.ndarray  # (n, len(VARIABLES))

    def __len__(self) -> int:
        return len(self.timestamps)

    def segments(self) -> list[tuple[int, int]]:
        """Half-open index ranges with no cadence breaks."""
        if len(self) == 0:
            return []
        breaks = np.flatnonzero(np.diff(self.timestamps) != CADENCE) + 1
        edges = [0, *breaks.tolist(), len(self)]
        return list(zip(edges[:-1], edges[1:]))


@dataclass
class TimeSeriesDataset:
    series: dict[str, SensorSeries]
    gaps: list[Gap] = field(default_factory=list)

    @property
    def sensors(self) -> list[str]:
        return list(self.series)

    def sensor_index(self, sensor_id: str) -> int:
        try:
            return self.sensors.index(sensor_id)
        except ValueError:
            raise DataError(f"unknown sensor {sensor_id!r}") from None

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.series.values())

    def pooled_values(self) -> np.ndarray:
        if not self.series:
            return np.zeros((0, len(VARIABLES)))
        return np.concatenate([s.values for s in self.series.values()], axis=0)


# ---------------------------------------------------------------- CSV


def parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


def format_number(x: float) -> str:
    return format(float(x), ".17g")


def _validate_values(temperature: float, humidity: float, line: int) -> None:
    if not (np.isfinite(temperature) and np.isfinite(humidity)):
        raise DataError(f"line {line}: non-finite measurement")
    if not 0.0 <= humidity <= 100.0:
        raise DataError(f"line {line}: humidity {humidity} outside [0, 100]")


def ingest_csv(path) -> TimeSeriesDataset:
    """Parse a ``timestamp,sensor_id,temperature,humidity`` CSV.

    Sensors are ordered by id. Within a sensor, timestamps must strictly
    increase in file order; cadence breaks are recorded in ``gaps``.
    """
    rows: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise DataError(f"line 1: expected header {','.join(HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise DataError(f"line {line}: expected {len(HEADER)} fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
                temperature, humidity = float(row[2]), float(row[3])
            except ValueError as exc:
                raise DataError(f"line {line}: {exc}") from None
            _validate_values(temperature, humidity, line)
            sid = row[1].strip()
            if not sid:
                raise DataError(f"line {line}: empty sensor_id")
            times, vals = rows.setdefault(sid, ([], []))
            if times and ts <= times[-1]:
                raise DataError(f"line {line}: timestamp {row[0]} not after previous record of sensor {sid}")
            times.append(ts)
            vals.append((temperature, humidity))
    series = {}
    gaps = []
    for sid in sorted(rows):
        times, vals = rows[sid]
        s = SensorSeries(sid, np.array(times, dtype="datetime64[s]"), np.array(vals, dtype=np.float64))
        deltas = np.diff(s.timestamps)
        for i in np.flatnonzero(deltas != CADENCE):
            gaps.append(Gap(sid, int(i) + 1, int(deltas[i] / np.timedelta64(1, "s"))))
        series[sid] = s
    return TimeSeriesDataset(series, gaps)


def export_csv(dataset: TimeSeriesDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        for sid, s in dataset.series.items():
            for ts, (t, h) in zip(s.timestamps, s.values):
                fh.write(f"{format_timestamp(ts)},{sid},{format_number(t)},{format_number(h)}\n")


# ---------------------------------------------------------------- scaling


@dataclass
class ScalerParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def scale(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * (x - self.minimum) / (self.maximum - self.minimum) - 1.0

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        return (y + 1.0) * 0.5 * (self.maximum - self.minimum) + self.minimum

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> ScalerParams:
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


def fit_scaler(values) -> ScalerParams:
    """Min-max parameters mapping the observed range of ``values`` onto [-1, 1]."""
    values = np.asarray(values, dtype=np.float64).reshape(-1, np.shape(values)[-1])
    if len(values) == 0:
        raise DataError("cannot fit a scaler on no data")
    lo, hi = values.min(axis=0), values.max(axis=0)
    const = np.flatnonzero(hi <= lo)
    if const.size:
        raise DataError(f"variable(s) {const.tolist()} are constant; min-max scaling undefined")
    return ScalerParams(lo, hi)


# ---------------------------------------------------------------- windows


@dataclass
class WindowSet:
    """Input windows (N, W, V) with one-step-ahead targets (N, V)."""

    inputs: np.ndarray
    targets: np.ndarray
    sensor_ids: np.ndarray  # int codes into ``sensors``
    starts: np.ndarray  # index of the first input record within its sensor series
    sensors: list[str]
    split: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def window(self) -> int:
        return self.inputs.shape[1]

    def subset(self, mask) -> WindowSet:
        return WindowSet(
            self.inputs[mask], self.targets[mask], self.sensor_ids[mask], self.starts[mask],
            self.sensors, None if self.split is None else self.split[mask],
        )

    def select(self, name: str) -> WindowSet:
        if self.split is None:
            raise DataError("window set has no split assignment")
        return self.subset(self.split == name)

    def sequences(self) -> np.ndarray:
        """Inputs with the target appended: (N, W + 1, V)."""
        return np.concatenate([self.inputs, self.targets[:, None, :]], axis=1)

    def keys(self) -> set[tuple[int, int]]:
        return set(zip(self.sensor_ids.tolist(), self.starts.tolist()))

    def scaled(self, scaler: ScalerParams) -> WindowSet:
        return WindowSet(scaler.scale(self.inputs), scaler.scale(self.targets), self.sensor_ids,
                         self.starts, self.sensors, self.split)

    def counts(self) -> dict[str, int]:
        if self.split is None:
            return {"all": len(self)}
        return {name: int(np.sum(self.split == name)) for name in SPLITS}

    @staticmethod
    def concatenate(parts: list[WindowSet]) -> WindowSet:
        parts = [p for p in parts if len(p)]
        if not parts:
            raise DataError("nothing to concatenate")
        split = None
        if all(p.split is not None for p in parts):
            split = np.concatenate([p.split for p in parts])
        return WindowSet(
            np.concatenate([p.inputs for p in parts]), np.concatenate([p.targets for p in parts]),
            np.concatenate([p.sensor_ids for p in parts]), np.concatenate([p.starts for p in parts]),
            parts[0].sensors, split,
        )


def rolling_windows(dataset: TimeSeriesDataset, window: int, stride: int = 1) -> WindowSet:
    """Slice every sensor into (W inputs, next-step target) pairs.

    Windows never cross a cadence gap. Sensors without any segment of
    length W + 1 are skipped with a warning.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    n_vars = len(VARIABLES)
    inputs, targets, ids, starts = [], [], [], []
    for code, (sid, s) in enumerate(dataset.series.items()):
        produced = 0
        for a, b in s.segments():
            if b - a < window + 1:
                continue
            view = np.lib.stride_tricks.sliding_window_view(s.values[a:b], window + 1, axis=0)
            view = view.transpose(0, 2, 1)[::stride]  # (n, W + 1, V)
            inputs.append(view[:, :window, :])
            targets.append(view[:, window, :])
            ids.append(np.full(len(view), code, dtype=np.int64))
            starts.append(a + np.arange(0, b - a - window, stride, dtype=np.int64))
            produced += len(view)
        if produced == 0:
            warnings.warn(f"sensor {sid}: no gap-free run of {window + 1} records; skipped", RuntimeWarning)
    if not inputs:
        return WindowSet(np.zeros((0, window, n_vars)), np.zeros((0, n_vars)), np.zeros(0, dtype=np.int64),
                         np.zeros(0, dtype=np.int64), dataset.sensors)
    return WindowSet(np.ascontiguousarray(np.concatenate(inputs)), np.ascontiguousarray(np.concatenate(targets)),
                     np.concatenate(ids), np.concatenate(starts), dataset.sensors)


def _split_counts(n: int, fractions) -> tuple[int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val


def split(windows: WindowSet, fractions=(0.75, 0.10, 0.15), seed: int = 0, mode: str = "random") -> WindowSet:
    """Tag windows train/val/test, stratified per sensor.

    ``random`` assigns individual windows at random (overlapping windows can
    land on both sides). ``block`` keeps each sensor's windows in time order
    and drops the ``W`` windows after every block boundary so no record is
    shared between splits.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    if mode not in ("random", "block"):
        raise ValueError(f"unknown split mode {mode!r}")
    rng = np.random.default_rng(seed)
    tags = np.empty(len(windows), dtype="<U5")
    keep = np.ones(len(windows), dtype=bool)
    for code in np.unique(windows.sensor_ids):
        idx = np.flatnonzero(windows.sensor_ids == code)
        n_train, n_val = _split_counts(len(idx), fractions)
        if mode == "random":
            idx = idx[rng.permutation(len(idx))]
            tags[idx[:n_train]] = "train"
            tags[idx[n_train:n_train + n_val]] = "val"
            tags[idx[n_train + n_val:]] = "test"
        else:
            idx = idx[np.argsort(windows.starts[idx], kind="stable")]
            blocks = [idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]]
            for name, block, embargo in zip(SPLITS, blocks, (0, windows.window, windows.window)):
                tags[block] = name
                keep[block[:embargo]] = False
    out = WindowSet(windows.inputs, windows.targets, windows.sensor_ids, windows.starts, windows.sensors, tags)
    return out if keep.all() else out.subset(keep)


def fit_scaler_on_split(windows: WindowSet, name: str = "train") -> ScalerParams:
    """Fit on every record touched by the windows of one split only."""
    part = windows.select(name) if windows.split is not None else windows
    return fit_scaler(part.sequences().reshape(-1, len(VARIABLES)))


def future_truth(dataset: TimeSeriesDataset, windows: WindowSet, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth continuations of ``length`` steps after each window's inputs.

    Returns (mask of windows whose continuation stays gap-free, truth array
    (n_kept, length, V)) in physical units.
    """
    keep = np.zeros(len(windows), dtype=bool)
    truth = []
    segs = {sid: s.segments() for sid, s in dataset.series.items()}
    for i, (code, start) in enumerate(zip(windows.sensor_ids, windows.starts)):
        sid = windows.sensors[code]
        s = dataset.series[sid]
        first = start + windows.window
        last = first + length
        if any(a <= start and last <= b for a, b in segs[sid]):
            keep[i] = True
            truth.append(s.values[first:last])
    if not truth:
        return keep, np.zeros((0, length, len(VARIABLES)))
    return keep, np.stack(truth)


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticConfig:
    """Stand-in telemetry generator settings. Steps are 10-minute samples."""

    sensors: int = 35
    steps: int = 5000
    cold_base: float = 21.0
    hot_base: float = 29.0
    base_jitter: float = 1.5
    diurnal_amplitude: float = 1.0
    diurnal_period: int = 144
    ar_coef: float = 0.95
    ar_scale: float = 0.15
    humidity_slope: float = -1.2
    humidity_intercept: float = 75.0
    humidity_offset_std: float = 1.5
    humidity_noise_ar: float = 0.999
    humidity_noise_scale: float = 0.173
    start: str = "2019-01-01T00:00:00Z"
    seed: int = 0

    def validate(self) -> None:
        if self.sensors < 1 or self.steps < 1:
            raise ValueError("sensors and steps must be >= 1")
        if self.diurnal_period < 1:
            raise ValueError("diurnal_period must be >= 1")
        if not -1.0 < self.ar_coef < 1.0 or not -1.0 < self.humidity_noise_ar < 1.0:
            raise ValueError("AR coefficients must lie in (-1, 1)")
        if min(self.ar_scale, self.base_jitter, self.humidity_offset_std, self.humidity_noise_scale,
               self.diurnal_amplitude) < 0:
            raise ValueError("noise scales and amplitudes must be non-negative")
        if self.humidity_slope > 0:
            raise ValueError("humidity_slope must be <= 0 (humidity falls as temperature rises)")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _ar1(rng: np.random.Generator, n: int, coef: float, scale: float) -> np.ndarray:
    eps = rng.standard_normal(n) * scale
    out = np.empty(n)
    prev = rng.standard_normal() * scale / np.sqrt(1.0 - coef * coef)
    for t in range(n):
        prev = coef * prev + eps[t]
        out[t] = prev
    return out


def _synth_sensor(cfg: SyntheticConfig, code: int, rng: np.random.Generator) -> np.ndarray:
    base = (cfg.hot_base if code % 2 else cfg.cold_base) + cfg.base_jitter * rng.standard_normal()
    t = np.arange(cfg.steps)
    temperature = base + cfg.diurnal_amplitude * np.sin(2 * np.pi * t / cfg.diurnal_period)
    temperature = temperature + _ar1(rng, cfg.steps, cfg.ar_coef, cfg.ar_scale)
    offset = cfg.humidity_offset_std * rng.standard_normal()
    noise = _ar1(rng, cfg.steps, cfg.humidity_noise_ar, cfg.humidity_noise_scale)
    humidity = np.clip(cfg.humidity_intercept + cfg.humidity_slope * temperature + offset + noise, 0.0, 100.0)
    return np.stack([temperature, humidity], axis=1)


def synthesize_dataset(cfg: SyntheticConfig | None = None) -> TimeSeriesDataset:
    """Generate a statistically matched stand-in dataset.

    temperature = aisle base + daily sine + AR(1) noise;
    humidity = intercept + slope * temperature + sensor offset + AR(1) noise,
    clipped to [0, 100]. Each sensor draws from its own seeded stream.
    """
    cfg = cfg or SyntheticConfig()
    cfg.validate()
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.sensors)
    start = parse_timestamp(cfg.start)
    stamps = start + np.arange(cfg.steps) * CADENCE
    width = max(2, len(str(cfg.sensors - 1)))
    series = {}
    for code in range(cfg.sensors):
        sid = f"sensor_{code:0{width}d}"
        series[sid] = SensorSeries(sid, stamps.copy(), _synth_sensor(cfg, code, np.random.default_rng(streams[code])))
    return TimeSeriesDataset(series)
