"""EvalReport: text table plus a versioned JSON document and figure data.

JSON schema ``scenariogan-eval/1``::

    {
      "schema": "scenariogan-eval/1",
      "variables": ["temperature", "humidity"],
      "kl_bits": float,                       # D(generated || real)
      "histogram": {"bins": int, "smoothing": float},
      "mse": {var: float}, "rmse": {var: float},
      "pearson": {"real": float, "generated": float},
      "derivatives": {"k": 5, "n_differences": int, var: {"sigma", "threshold", "min", "max", "degenerate"}},
      "anomaly_rate": {var: float},           # share of generated steps beyond the real +-k sigma
      "n_windows": int,
      "tstr": null | {...},                   # see TstrTable.to_dict
      "reference": {...},                     # values reported for the original (proprietary) data
      "config": {...}                         # effective run configuration
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datapipe import VARIABLES
from . import metrics
from .tstr import TstrTable

SCHEMA = "scenariogan-eval/1"

# Published figures for the original data-center recordings. They cannot be
# reproduced on the synthetic stand-in and are carried only for comparison.
REFERENCE = {
    "note": "reported on the original proprietary recordings; not reproducible on synthetic data",
    "validation": {"kl_bits": 1.432, "rmse": {"temperature": 0.988, "humidity": 0.661},
                   "mse": {"temperature": 0.977, "humidity": 0.438}},
    "test": {"kl_bits": [1.363, 0.071], "rmse": {"temperature": [0.995, 0.08], "humidity": [0.661, 0.03]}},
    "derivative_thresholds": {"temperature": 1.2, "humidity": 0.45},
    "derivative_extremes": {"temperature": [-9.79, 11.9], "humidity": [-3.59, 2.64]},
    "tstr_mse": {
        "TSTR": {"temperature": [0.106, 0.013], "humidity": [0.018, 0.005]},
        "TSRTR": {"temperature": [0.0525, 0.004], "humidity": [0.0087, 0.001]},
        "TRTR": {"temperature": 0.0738, "humidity": 0.0094},
        "TSTR (5% anomalies)": {"temperature": [0.103, 0.008], "humidity": [0.0168, 0.003]},
        "TSTR (10% anomalies)": {"temperature": [0.0899, 0.004], "humidity": [0.0139, 0.002]},
        "TSRTR (5% anomalies)": {"temperature": [0.0532, 0.004], "humidity": [0.0078, 0.004]},
        "TSRTR (10% anomalies)": {"temperature": [0.0584, 0.005], "humidity": [0.0086, 0.002]},
    },
}


@dataclass
class EvalReport:
    kl_bits: float
    mse: np.ndarray
    rmse: np.ndarray
    pearson_real: float
    pearson_generated: float
    derivatives: metrics.DerivativeStats
    anomaly_rate: np.ndarray
    n_windows: int
    bins: int = 32
    smoothing: float = 1e-6
    tstr: TstrTable | None = None
    config: dict = field(default_factory=dict)
    histograms: tuple | None = None  # (generated, real) JointHistogram for figure data
    generated_differences: np.ndarray | None = None

    @classmethod
    def build(cls, generated, real, last_values=None, real_sequences=None, bins: int = 32,
              smoothing: float = 1e-6, paired: bool = True, config: dict | None = None) -> EvalReport:
        """Score generated trajectories (n, L, V) against real ones.

        ``real_sequences`` (per-sensor arrays) supply the derivative
        thresholds; without them the real trajectories are used.
        ``paired`` says whether generated and real rows correspond, which is
        what MSE needs; unpaired inputs get NaN MSE.
        """
        generated = np.asarray(generated, dtype=np.float64)
        real = np.asarray(real, dtype=np.float64)
        if generated.ndim == 2:
            generated = generated[None]
        if real.ndim == 2:
            real = real[None]
        hg, hr = metrics.joint_histograms(generated, real, bins, smoothing)
        kl = metrics.kl_from_probabilities(hg.probabilities(), hr.probabilities())
        if paired and generated.shape == real.shape:
            m = metrics.mse(generated, real)
        else:
            m = np.full(generated.shape[-1], np.nan)
        deriv = metrics.derivative_stats(real_sequences if real_sequences is not None else list(real))
        if last_values is not None:
            seq = np.concatenate([np.asarray(last_values, dtype=np.float64)[:, None], generated], axis=1)
        else:
            seq = generated
        diffs = np.diff(seq, axis=1).reshape(-1, generated.shape[-1])
        rate = np.mean(np.abs(diffs) > deriv.thresholds, axis=0) if len(diffs) else np.zeros(generated.shape[-1])
        return cls(kl, m, np.sqrt(m), _pearson(real), _pearson(generated), deriv, rate, len(generated),
                   bins, smoothing, None, dict(config or {}), (hg, hr), diffs)

    def to_dict(self) -> dict:
        names = list(VARIABLES)
        return {
            "schema": SCHEMA,
            "variables": names,
            "kl_bits": self.kl_bits,
            "histogram": {"bins": self.bins, "smoothing": self.smoothing},
            "mse": dict(zip(names, map(_num, self.mse))),
            "rmse": dict(zip(names, map(_num, self.rmse))),
            "pearson": {"real": _num(self.pearson_real), "generated": _num(self.pearson_generated)},
            "derivatives": self.derivatives.to_dict(names),
            "anomaly_rate": dict(zip(names, map(float, self.anomaly_rate))),
            "n_windows": self.n_windows,
            "tstr": None if self.tstr is None else self.tstr.to_dict(),
            "reference": REFERENCE,
            "config": self.config,
        }

    def to_text(self) -> str:
        lines = [
            f"KL divergence D(generated || real): {self.kl_bits:.4f} bits "
            f"({self.bins}x{self.bins} grid, smoothing {self.smoothing:g})",
            f"windows scored: {self.n_windows}",
            f"{'variable':<12}{'MSE':>12}{'RMSE':>12}{'5-sigma thr':>14}{'anomaly rate':>14}",
        ]
        for i, var in enumerate(VARIABLES):
            lines.append(f"{var:<12}{self.mse[i]:>12.4g}{self.rmse[i]:>12.4g}"
                         f"{self.derivatives.thresholds[i]:>14.4g}{self.anomaly_rate[i]:>14.4g}")
        lines.append(f"Pearson r (temperature, humidity): real {self.pearson_real:.4f}, "
                     f"generated {self.pearson_generated:.4f}")
        if self.tstr is not None:
            lines += ["", self.tstr.to_text("scaled"), "", self.tstr.to_text("physical")]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        """Write report.txt, report.json and CSV figure data into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.txt", out / "report.json"]
        paths[0].write_text(self.to_text())
        paths[1].write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        if self.histograms is not None:
            for tag, h in zip(("generated", "real"), self.histograms):
                p = out / f"histogram_{tag}.csv"
                _write_grid(p, h)
                paths.append(p)
        if self.generated_differences is not None:
            p = out / "derivative_histogram.csv"
            _write_derivative_hist(p, self.generated_differences, self.derivatives)
            paths.append(p)
        return paths


def _num(x) -> float | None:
    x = float(x)
    return None if np.isnan(x) else x


def _pearson(values: np.ndarray) -> float:
    try:
        return metrics.pearson(values.reshape(-1, values.shape[-1]))
    except metrics.MetricError:
        return float("nan")


def _write_grid(path: Path, hist: metrics.JointHistogram) -> None:
    ex, ey = hist.edges
    with open(path, "w") as fh:
        fh.write(f"{VARIABLES[0]}_lo,{VARIABLES[0]}_hi,{VARIABLES[1]}_lo,{VARIABLES[1]}_hi,count\n")
        for i in range(len(ex) - 1):
            for j in range(len(ey) - 1):
                fh.write(f"{ex[i]:.17g},{ex[i + 1]:.17g},{ey[j]:.17g},{ey[j + 1]:.17g},{int(hist.counts[i, j])}\n")


def _write_derivative_hist(path: Path, diffs: np.ndarray, stats: metrics.DerivativeStats, bins: int = 64) -> None:
    with open(path, "w") as fh:
        fh.write("variable,lo,hi,count,threshold\n")
        for v, var in enumerate(VARIABLES):
            counts, edges = np.histogram(diffs[:, v], bins=bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                fh.write(f"{var},{lo:.17g},{hi:.17g},{int(c)},{stats.thresholds[v]:.17g}\n")
