"""Synthetic-data quality metrics, scenario scoring and the TSTR harness."""

from .metrics import (
    DerivativeStats,
    JointHistogram,
    MetricError,
    derivative_stats,
    detect_anomalies,
    kl_divergence,
    kl_from_probabilities,
    mse,
    pearson,
    rmse,
    t_interval,
)
from .protocol import ScenarioScore, score_scenarios
from .report import EvalReport
from .tstr import MODES, IsolationError, PredictorSpec, TstrTable, assert_isolated, run_study

__all__ = [
    "DerivativeStats", "JointHistogram", "MetricError", "derivative_stats", "detect_anomalies",
    "kl_divergence", "kl_from_probabilities", "mse", "pearson", "rmse", "t_interval",
    "ScenarioScore", "score_scenarios", "EvalReport", "MODES", "IsolationError", "PredictorSpec",
    "TstrTable", "assert_isolated", "run_study",
]
