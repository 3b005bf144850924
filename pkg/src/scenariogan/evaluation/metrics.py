"""Distributional and pointwise metrics on (n, V) samples.

KL divergences are in bits and taken on a shared 2-D histogram grid whose
edges span the union of both sample sets. The default direction is
D(generated || real).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


class MetricError(ValueError):
    pass


def _pairs(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    x = x.reshape(-1, x.shape[-1])
    if len(x) == 0:
        raise MetricError("empty sample set")
    if not np.isfinite(x).all():
        raise MetricError("samples contain non-finite values")
    return x


def union_edges(a: np.ndarray, b: np.ndarray, bins: int) -> list[np.ndarray]:
    """Per-dimension equal-width edges covering both sample sets."""
    edges = []
    for d in range(a.shape[1]):
        lo = min(a[:, d].min(), b[:, d].min())
        hi = max(a[:, d].max(), b[:, d].max())
        if hi <= lo:  # a single repeated value: give it a unit-wide bin range
            lo, hi = lo - 0.5, hi + 0.5
        edges.append(np.linspace(lo, hi, bins + 1))
    return edges


@dataclass
class JointHistogram:
    edges: list[np.ndarray]
    counts: np.ndarray
    smoothing: float = 1e-6

    @classmethod
    def from_samples(cls, samples, edges: list[np.ndarray], smoothing: float = 1e-6) -> JointHistogram:
        x = _pairs(samples)
        if x.shape[1] != len(edges):
            raise MetricError(f"samples have {x.shape[1]} columns but {len(edges)} edge arrays were given")
        counts, _ = np.histogramdd(x, bins=edges)
        return cls(list(edges), counts, smoothing)

    def probabilities(self) -> np.ndarray:
        """Normalized bin masses, then ``smoothing`` added per bin and renormalized."""
        p = self.counts / self.counts.sum()
        if self.smoothing > 0:
            p = p + self.smoothing
            p = p / p.sum()
        return p


def kl_from_probabilities(p, q) -> float:
    """sum p * log2(p / q) over bins with p > 0; inf if q vanishes where p does not."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise MetricError(f"probability vectors differ in shape: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return max(float(np.sum(p[mask] * np.log2(p[mask] / q[mask]))), 0.0)


def joint_histograms(generated, real, bins: int = 32, smoothing: float = 1e-6):
    g, r = _pairs(generated), _pairs(real)
    if g.shape[1] != r.shape[1]:
        raise MetricError(f"column mismatch: {g.shape[1]} vs {r.shape[1]}")
    edges = union_edges(g, r, bins)
    return JointHistogram.from_samples(g, edges, smoothing), JointHistogram.from_samples(r, edges, smoothing)


def kl_divergence(generated, real, bins: int = 32, smoothing: float = 1e-6) -> float:
    """D(generated || real) in bits on a ``bins`` x ``bins`` grid."""
    hg, hr = joint_histograms(generated, real, bins, smoothing)
    return kl_from_probabilities(hg.probabilities(), hr.probabilities())


def _aligned(prediction, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.size == 0:
        raise MetricError("empty series")
    if p.ndim == 1:
        return p[:, None], t[:, None]
    return p.reshape(-1, p.shape[-1]), t.reshape(-1, t.shape[-1])


def mse(prediction, truth) -> np.ndarray:
    """Per-variable mean squared error; the last axis indexes variables."""
    p, t = _aligned(prediction, truth)
    return np.mean((t - p) ** 2, axis=0)


def rmse(prediction, truth) -> np.ndarray:
    return np.sqrt(mse(prediction, truth))


@dataclass
class DerivativeStats:
    sigma: np.ndarray
    thresholds: np.ndarray  # k * sigma
    minimum: np.ndarray
    maximum: np.ndarray
    n: int
    k: float = 5.0

    @property
    def degenerate(self) -> np.ndarray:
        return self.sigma == 0

    def to_dict(self, names=None) -> dict:
        names = names or [str(i) for i in range(len(self.sigma))]
        return {
            "k": self.k,
            "n_differences": self.n,
            **{name: {"sigma": float(s), "threshold": float(th), "min": float(lo), "max": float(hi),
                      "degenerate": bool(s == 0)}
               for name, s, th, lo, hi in zip(names, self.sigma, self.thresholds, self.minimum, self.maximum)},
        }


def one_step_differences(sequences) -> np.ndarray:
    """Pooled within-sequence differences; sequences shorter than 2 contribute nothing."""
    parts = [np.diff(np.asarray(s, dtype=np.float64), axis=0) for s in sequences if len(s) >= 2]
    if not parts:
        raise MetricError("no sequence has at least two records")
    return np.concatenate(parts, axis=0)


def derivative_stats(sequences, k: float = 5.0) -> DerivativeStats:
    """Population standard deviation of one-step differences and +-k sigma thresholds."""
    d = one_step_differences(sequences)
    sigma = d.std(axis=0)
    return DerivativeStats(sigma, k * sigma, d.min(axis=0), d.max(axis=0), len(d), k)


def detect_anomalies(scenarios, last_values, thresholds) -> np.ndarray:
    """Counts (L, V) of scenarios whose step change strictly exceeds the threshold.

    ``scenarios`` is (S, L, V); the first change is taken against
    ``last_values`` (the final conditioning step, (V,) or (S, V)).
    """
    x = np.asarray(scenarios, dtype=np.float64)
    last = np.broadcast_to(np.asarray(last_values, dtype=np.float64), (x.shape[0], x.shape[2]))
    d = np.diff(np.concatenate([last[:, None, :], x], axis=1), axis=1)
    return np.sum(np.abs(d) > np.asarray(thresholds, dtype=np.float64), axis=0)


def pearson(x, y=None) -> float:
    """Sample Pearson r between two series, or between the columns of an (n, 2) array."""
    if y is None:
        pairs = _pairs(x)
        if pairs.shape[1] != 2:
            raise MetricError("pearson on a single array needs exactly two columns")
        x, y = pairs[:, 0], pairs[:, 1]
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y) or len(x) < 2:
        raise MetricError("pearson needs two equal-length series of at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise MetricError("zero variance: correlation undefined")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def t_interval(values, confidence: float = 0.95) -> tuple[float, float]:
    """(mean, Student-t half-width); half-width is nan for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricError("no values")
    if v.size == 1:
        return float(v[0]), float("nan")
    half = stats.t.ppf(0.5 + confidence / 2, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size)
    return float(v.mean()), float(half)
