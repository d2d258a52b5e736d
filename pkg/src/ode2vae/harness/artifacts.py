"""On-disk artifacts: PGM frame dumps, forecast containers and phase-space CSVs."""

from __future__ import annotations

import csv
import os

import numpy as np

from .. import checkpoint
from .forecast import Forecast

PGM_NAME = "seq{seq:03d}_t{t:03d}_k{k:02d}.pgm"


def pgm_bytes(frame: np.ndarray) -> bytes:
    """8-bit binary P5 image of a single-channel frame with pixels in [0, 1]."""
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel 2-D frame, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + np.rint(255.0 * img).astype(np.uint8).tobytes()


def dump_frames(frames: np.ndarray, directory, frame_shape: tuple) -> list[str]:
    """Write ``frames`` (n, K, L, D) as one PGM per (sequence, time, sample).

    Everything is validated before the first file is written.
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[:, None]
    n, K, L, _ = frames.shape
    shape = tuple(frame_shape)[:2]
    blobs = {}
    for i in range(n):
        for t in range(L):
            for k in range(K):
                blobs[PGM_NAME.format(seq=i, t=t, k=k)] = pgm_bytes(frames[i, k, t].reshape(shape))
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, blob in blobs.items():
        path = os.path.join(directory, name)
        with open(path, "wb") as fh:
            fh.write(blob)
        paths.append(path)
    return paths


def save_forecast(path, fc: Forecast, window: int, frame_shape: tuple) -> None:
    checkpoint.save(
        path,
        {
            "times": np.asarray(fc.times, dtype=np.float64),
            "frames": np.asarray(fc.frames, dtype=np.float32),
            "s": np.asarray(fc.s, dtype=np.float32),
            "v": np.asarray(fc.v, dtype=np.float32),
            "logq": np.asarray(fc.logq, dtype=np.float32),
            "window": np.array([window], dtype=np.float64),
            "frame_shape": np.array(frame_shape, dtype=np.float64),
        },
    )


def load_forecast(path) -> tuple[Forecast, int, tuple]:
    """Returns ``(forecast, window, frame_shape)``."""
    e = checkpoint.load(path)
    try:
        fc = Forecast(e["times"], e["frames"], e["s"], e["v"], e["logq"])
        window = int(e["window"][0])
        shape = tuple(int(x) for x in e["frame_shape"])
    except KeyError as exc:
        raise checkpoint.CheckpointFormatError(f"not a forecast file: missing {exc}") from None
    return fc, window, shape


def write_phase_csv(path, fc: Forecast) -> None:
    """Latent trajectories, one row per (sequence, sample, time)."""
    n, K, L, d = fc.s.shape
    cols = ["seq", "sample", "t"] + [f"s{j}" for j in range(d)] + [f"v{j}" for j in range(d)] + ["logq"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(n):
            for k in range(K):
                for t in range(L):
                    row = [i, k, f"{fc.times[i, t]:.9g}"]
                    row += [f"{x:.9g}" for x in fc.s[i, k, t]] + [f"{x:.9g}" for x in fc.v[i, k, t]]
                    row.append(f"{fc.logq[i, k, t]:.9g}")
                    w.writerow(row)
