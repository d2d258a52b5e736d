"""Plots of training curves, forecast error and latent phase portraits.

Each PNG is written next to the CSV it is drawn from.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so identical inputs give identical bytes
_PNG_META = {"Software": None}


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _save(fig, csv_path, suffix: str) -> str:
    out = os.path.splitext(csv_path)[0] + suffix + ".png"
    fig.savefig(out, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return out


def plot_training(metrics_csv) -> str:
    header, data = _read_csv(metrics_csv)
    col = {name: i for i, name in enumerate(header)}
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    step = data[:, col["step"]] if len(data) else []
    for name in ("total", "vae_term", "dynamic_term"):
        axes[0].plot(step, data[:, col[name]] if len(data) else [], label=name, lw=1)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("nats per sequence")
    axes[0].legend(frameon=False, fontsize=8)
    axes[1].plot(step, data[:, col["enc_consistency"]] if len(data) else [], lw=1, color="C3")
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("encoder consistency KL")
    fig.tight_layout()
    return _save(fig, metrics_csv, "")


def plot_horizon(eval_csv, baselines: dict | None = None) -> str:
    """MSE mean with a one-std band; ``baselines`` maps a label to a per-horizon array."""
    header, data = _read_csv(eval_csv)
    col = {name: i for i, name in enumerate(header)}
    h, mean, std = data[:, col["horizon"]], data[:, col["mse_mean"]], data[:, col["mse_std"]]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(h, mean, "o-", ms=3, label="model")
    ax.fill_between(h, mean - std, mean + std, alpha=0.25)
    ax.plot(h, data[:, col["mse_of_mean"]], "--", label="mean prediction")
    for label, curve in (baselines or {}).items():
        ax.plot(h, np.asarray(curve)[: len(h)], ":", label=label)
    ax.set_xlabel("horizon")
    ax.set_ylabel("MSE")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, eval_csv, "")


def plot_phase(phase_csv, max_sequences: int = 8) -> str:
    """s_0 against v_0 for the first few sequences, every sample in light lines."""
    header, data = _read_csv(phase_csv)
    col = {name: i for i, name in enumerate(header)}
    fig, ax = plt.subplots(figsize=(4.5, 4))
    seqs = np.unique(data[:, col["seq"]])[:max_sequences] if len(data) else []
    for c, i in enumerate(seqs):
        rows = data[data[:, col["seq"]] == i]
        for k in np.unique(rows[:, col["sample"]]):
            r = rows[rows[:, col["sample"]] == k]
            ax.plot(r[:, col["s0"]], r[:, col["v0"]], color=f"C{c % 10}", lw=0.6, alpha=0.4)
    ax.set_xlabel("$s_0$")
    ax.set_ylabel("$v_0$")
    fig.tight_layout()
    return _save(fig, phase_csv, "")


def report_directory(directory) -> list[str]:
    """Plot every known CSV found in ``directory``."""
    out = []
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if name == "metrics.csv":
            out.append(plot_training(path))
        elif name.startswith("eval") and name.endswith(".csv"):
            out.append(plot_horizon(path))
        elif name.startswith("phase") and name.endswith(".csv"):
            out.append(plot_phase(path))
    return out
