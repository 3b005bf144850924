"""Scenario scoring against held-out ground truth.

For every selected window of a split, one random scenario of ``length``
steps is generated from the window and compared with the next ``length``
real records. KL is taken between the pooled generated points and the
pooled real points; MSE is pointwise. Both are in physical units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datapipe import DataError, TimeSeriesDataset, WindowSet, future_truth
from ..gan.training import GanModel
from ..scenario import rollout_batch
from . import metrics


@dataclass
class ScenarioScore:
    kl_bits: float
    mse: np.ndarray
    rmse: np.ndarray
    pearson_generated: float
    pearson_real: float
    n_windows: int
    generated: np.ndarray  # (n, L, V) physical units
    truth: np.ndarray  # (n, L, V) physical units
    last_values: np.ndarray  # (n, V) final conditioning record, physical units

    def to_dict(self, names) -> dict:
        return {
            "kl_bits": self.kl_bits,
            "mse": dict(zip(names, map(float, self.mse))),
            "rmse": dict(zip(names, map(float, self.rmse))),
            "pearson_generated": self.pearson_generated,
            "pearson_real": self.pearson_real,
            "n_windows": self.n_windows,
        }


def holdout_windows(dataset: TimeSeriesDataset, windows: WindowSet, split_name: str, length: int,
                    max_windows: int | None = None, seed: int = 0) -> tuple[WindowSet, np.ndarray]:
    """Unscaled windows of one split that have ``length`` gap-free future records."""
    sel = windows.select(split_name) if windows.split is not None else windows
    keep, truth = future_truth(dataset, sel, length)
    sel = sel.subset(keep)
    if len(sel) == 0:
        raise DataError(f"split {split_name!r} has no window with {length} future records")
    if max_windows is not None and len(sel) > max_windows:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
        pick = np.sort(rng.choice(len(sel), size=max_windows, replace=False))
        sel, truth = sel.subset(pick), truth[pick]
    return sel, truth


def _safe_pearson(values: np.ndarray) -> float:
    try:
        return metrics.pearson(values.reshape(-1, values.shape[-1]))
    except metrics.MetricError:
        return float("nan")


def generate_for_windows(model: GanModel, windows: WindowSet, length: int, seed: int = 0,
                         chunk: int = 2048) -> np.ndarray:
    """One scenario per unscaled window, returned in physical units (n, L, V)."""
    if model.scaler is None:
        raise DataError("model has no scaler; cannot map real windows into its domain")
    hist = model.scaler.scale(windows.inputs)
    dim = model.gen_spec.noise_dim
    noise = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,))).standard_normal(
        (len(windows), length, dim))
    out = np.empty((len(windows), length, model.gen_spec.n_vars))
    for a in range(0, len(windows), chunk):
        out[a:a + chunk] = rollout_batch(model, hist[a:a + chunk], windows.sensor_ids[a:a + chunk],
                                         noise[a:a + chunk])
    return model.scaler.inverse(out)


def score_scenarios(model: GanModel, dataset: TimeSeriesDataset, windows: WindowSet, split_name: str = "val",
                    length: int = 24, max_windows: int | None = None, seed: int = 0, bins: int = 32,
                    smoothing: float = 1e-6) -> ScenarioScore:
    sel, truth = holdout_windows(dataset, windows, split_name, length, max_windows, seed)
    generated = generate_for_windows(model, sel, length, seed)
    return score_arrays(generated, truth, sel.inputs[:, -1], bins, smoothing)


def score_arrays(generated: np.ndarray, truth: np.ndarray, last_values: np.ndarray, bins: int = 32,
                 smoothing: float = 1e-6) -> ScenarioScore:
    kl = metrics.kl_divergence(generated, truth, bins, smoothing)
    m = metrics.mse(generated, truth)
    return ScenarioScore(kl, m, np.sqrt(m), _safe_pearson(generated), _safe_pearson(truth), len(truth),
                         generated, truth, last_values)


def noise_trajectories(model: GanModel, n: int, length: int, seed: int = 0) -> np.ndarray:
    """N(0, 1) trajectories in the scaled domain, mapped to physical units: a no-skill baseline."""
    if model.scaler is None:
        raise DataError("model has no scaler")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    return model.scaler.inverse(rng.standard_normal((n, length, model.gen_spec.n_vars)))
