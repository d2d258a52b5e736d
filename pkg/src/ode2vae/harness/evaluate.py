"""Forecast error tables and naive baselines."""

from __future__ import annotations

import csv

import numpy as np

EVAL_COLUMNS = ("horizon", "mse_mean", "mse_std", "mse_of_mean")


def mse_table(predictions: np.ndarray, truth: np.ndarray, start: int) -> list[dict]:
    """Per-horizon MSE for samples ``predictions`` (n, K, L, D) against ``truth`` (n, L, D).

    Horizon h scores frame ``start - 1 + h``. For every sample the squared
    error is averaged over dimensions and sequences; the table reports the
    mean and (population) std across samples and the MSE of the sample mean.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.ndim != 4 or truth.ndim != 3:
        raise ValueError("predictions must be (n, K, L, D) and truth (n, L, D)")
    n, K, L, D = predictions.shape
    if truth.shape != (n, L, D):
        raise ValueError(f"predictions {predictions.shape} are not aligned with truth {truth.shape}")
    rows = []
    for t in range(start, L):
        err = (predictions[:, :, t] - truth[:, None, t]) ** 2  # (n, K, D)
        per_sample = err.mean(axis=(0, 2))
        mean_pred = predictions[:, :, t].mean(axis=1)
        rows.append(
            {
                "horizon": t - start + 1,
                "mse_mean": float(per_sample.mean()),
                "mse_std": float(per_sample.std()),
                "mse_of_mean": float(((mean_pred - truth[:, t]) ** 2).mean()),
            }
        )
    return rows


def per_sequence_mse(predictions: np.ndarray, truth: np.ndarray, frames) -> np.ndarray:
    """(n,) MSE of the sample-mean prediction over the selected frame indices."""
    predictions = np.asarray(predictions, dtype=np.float64)
    mean_pred = predictions.mean(axis=1)
    idx = np.asarray(frames)
    return ((mean_pred[:, idx] - np.asarray(truth, dtype=np.float64)[:, idx]) ** 2).mean(axis=(1, 2))


def repeat_last_baseline(truth: np.ndarray, start: int) -> np.ndarray:
    """Every frame from ``start`` on is a copy of frame ``start - 1``; shaped (n, 1, L, D)."""
    pred = np.array(truth, dtype=np.float64, copy=True)
    pred[:, start:] = pred[:, start - 1 : start]
    return pred[:, None]


def linear_extrapolation_baseline(truth: np.ndarray, times: np.ndarray, start: int) -> np.ndarray:
    """Straight line through frames ``start - 2`` and ``start - 1`` in time; shaped (n, 1, L, D)."""
    if start < 2:
        raise ValueError("linear extrapolation needs two conditioning frames")
    truth = np.asarray(truth, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    pred = truth.copy()
    a, b = truth[:, start - 2], truth[:, start - 1]
    ta, tb = times[:, start - 2], times[:, start - 1]
    slope = (b - a) / (tb - ta)[:, None]
    for t in range(start, truth.shape[1]):
        pred[:, t] = b + slope * (times[:, t] - tb)[:, None]
    return pred[:, None]


def nearest_observed_baseline(frames: np.ndarray, mask: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """For each target frame, copy the nearest observed frame in index (earlier wins ties)."""
    out = np.array(frames, dtype=np.float64, copy=True)
    n, L = mask.shape
    for i in range(n):
        obs = np.flatnonzero(mask[i])
        for t in np.flatnonzero(targets[i]):
            j = obs[np.argmin(np.abs(obs - t) + 1e-3 * (obs > t))]
            out[i, t] = frames[i, j]
    return out


def write_table(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "horizon" else f"{r[k]:.9g}") for k in EVAL_COLUMNS})
