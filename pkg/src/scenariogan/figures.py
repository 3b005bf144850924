"""PNG figures for reports. Uses the Agg backend and strips PNG metadata so
identical inputs give identical files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datapipe import VARIABLES  # noqa: E402

UNITS = {"temperature": "°C", "humidity": "%"}
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_scenarios(history: np.ndarray, scenarios: np.ndarray, path, title: str = "",
                   anomaly_step: int | None = None, truth: np.ndarray | None = None) -> Path:
    """Conditioning window (W, V) followed by S scenarios (S, L, V), one panel per variable."""
    w = len(history)
    t_hist = np.arange(-w + 1, 1)
    t_gen = np.arange(1, scenarios.shape[1] + 1)
    fig, axes = plt.subplots(len(VARIABLES), 1, figsize=(8, 5), sharex=True)
    for v, (ax, var) in enumerate(zip(axes, VARIABLES)):
        ax.plot(t_hist, history[:, v], color="black", lw=1.5, label="history")
        for s, traj in enumerate(scenarios):
            ax.plot(np.r_[0, t_gen], np.r_[history[-1, v], traj[:, v]], lw=0.9, alpha=0.8,
                    label="scenarios" if s == 0 else None)
        if truth is not None:
            ax.plot(np.r_[0, t_gen], np.r_[history[-1, v], truth[:, v]], color="black", ls="--", lw=1.2,
                    label="observed")
        if anomaly_step is not None:
            ax.axvline(anomaly_step + 1, color="red", ls=":", lw=1, label="anomaly step")
        ax.set_ylabel(f"{var} [{UNITS[var]}]")
    axes[0].legend(loc="upper left", fontsize=8)
    axes[-1].set_xlabel("step (10 min)")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_derivative_histograms(real_diffs: np.ndarray, thresholds: np.ndarray, path,
                               generated_diffs: np.ndarray | None = None, bins: int = 80) -> Path:
    """One-step change histograms per variable with the +-threshold lines."""
    fig, axes = plt.subplots(1, len(VARIABLES), figsize=(10, 3.5))
    for v, (ax, var) in enumerate(zip(axes, VARIABLES)):
        lo = real_diffs[:, v].min()
        hi = real_diffs[:, v].max()
        if generated_diffs is not None and len(generated_diffs):
            lo, hi = min(lo, generated_diffs[:, v].min()), max(hi, generated_diffs[:, v].max())
        edges = np.linspace(min(lo, -thresholds[v]) - 1e-9, max(hi, thresholds[v]) + 1e-9, bins + 1)
        ax.hist(real_diffs[:, v], bins=edges, density=True, alpha=0.6, label="real")
        if generated_diffs is not None and len(generated_diffs):
            ax.hist(generated_diffs[:, v], bins=edges, density=True, alpha=0.6, label="generated")
        for sign in (-1, 1):
            ax.axvline(sign * thresholds[v], color="red", ls="--", lw=1)
        ax.set_yscale("log")
        ax.set_xlabel(f"one-step change [{UNITS[var]}]")
        ax.set_title(var)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_joint_histograms(generated_hist, real_hist, path) -> Path:
    """Side-by-side bin counts of the two joint histograms on their shared grid."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True, sharey=True)
    ex, ey = real_hist.edges
    for ax, h, name in zip(axes, (generated_hist, real_hist), ("generated", "real")):
        p = h.counts / max(h.counts.sum(), 1)
        mesh = ax.pcolormesh(ex, ey, p.T, shading="flat", cmap="viridis")
        fig.colorbar(mesh, ax=ax)
        ax.set_title(name)
        ax.set_xlabel(f"temperature [{UNITS['temperature']}]")
    axes[0].set_ylabel(f"humidity [{UNITS['humidity']}]")
    fig.tight_layout()
    return _save(fig, path)


def plot_losses(history: dict, path) -> Path:
    keys = [k for k in ("critic_loss", "wasserstein_gap", "gradient_penalty", "generator_loss") if history.get(k)]
    fig, axes = plt.subplots(len(keys), 1, figsize=(8, 1.8 * max(len(keys), 1)), sharex=True, squeeze=False)
    for ax, k in zip(axes[:, 0], keys):
        ax.plot(np.arange(1, len(history[k]) + 1), history[k], lw=0.8)
        ax.set_ylabel(k.replace("_", " "), fontsize=8)
    axes[-1, 0].set_xlabel("generator iteration")
    fig.tight_layout()
    return _save(fig, path)


def plot_grid(results, path) -> Path:
    """Bar chart of KL per grid row (failed rows shown empty)."""
    labels = [f"{i + 1}" for i in range(len(results))]
    kl = [r.kl_bits if r.status == "ok" else 0.0 for r in results]
    ref = [r.row.reference_kl or 0.0 for r in results]
    x = np.arange(len(results))
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(x - 0.2, kl, width=0.4, label="this run")
    ax.bar(x + 0.2, ref, width=0.4, label="reference")
    ax.set_xticks(x, labels)
    ax.set_xlabel("grid row")
    ax.set_ylabel("KL [bits]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
