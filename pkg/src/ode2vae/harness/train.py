"""Minibatch training with Adam, per-step metrics and best-validation checkpoints."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .. import checkpoint
from ..autodiff import Tape, backprop, precision
from ..data import SequenceBatch, read_dataset
from ..model import ModelConfig, bind, init_model
from ..nn import adam_init, adam_step
from ..objective import LossBreakdown, elbo, penalized_loss
from .config import RunConfig

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "weight_kl", "vae_term", "dynamic_term", "enc_consistency", "total", "beta", "gamma")


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    best_checkpoint: str
    last_checkpoint: str
    metrics_csv: str
    validation_csv: str
    val_history: list = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False


def split_validation(n: int, fraction: float, seed: int):
    """Seeded train/validation partition of sequence indices."""
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(n)
    n_val = int(round(fraction * n))
    if fraction > 0 and n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def random_crops(batch: SequenceBatch, length: int, window: int, rng: np.random.Generator) -> SequenceBatch:
    """One random subsequence of ``length`` frames per sequence, re-timed to start at 0.

    Start points are restricted to those whose leading ``window`` frames are observed.
    """
    if length <= 0 or length >= batch.seq_len:
        return batch
    times, frames, mask = [], [], []
    for i in range(batch.n_sequences):
        starts = [
            s for s in range(batch.seq_len - length + 1) if batch.mask[i, s : s + window].all()
        ]
        s = starts[rng.integers(len(starts))]
        t = batch.times[i, s : s + length].astype(np.float64)
        times.append(t - t[0])
        frames.append(batch.frames[i, s : s + length])
        mask.append(batch.mask[i, s : s + length])
    return SequenceBatch(np.stack(times), np.stack(frames), np.stack(mask), batch.frame_shape, batch.sensor)


def _fmt(x) -> str:
    return repr(int(x)) if isinstance(x, (int, np.integer)) else f"{float(x):.9g}"


def _finite(lb: LossBreakdown) -> bool:
    return all(np.isfinite(v) for v in lb.row().values())


def validation_total(model_cfg: ModelConfig, params: dict, val: SequenceBatch, seed: int, chunk: int = 64) -> float:
    """Bound (consistency penalty off) on the validation split with frozen noise."""
    if val.n_sequences == 0:
        return float("nan")
    total = 0.0
    for start in range(0, val.n_sequences, chunk):
        idx = np.arange(start, min(start + chunk, val.n_sequences))
        lb = elbo(val.subset(idx), bind(model_cfg, params), seed=[seed, 0x7A1, start])
        total += float(lb.total.data) * len(idx)
    return total / val.n_sequences


def save_checkpoint(path, run_cfg: RunConfig, model_cfg: ModelConfig, epoch: int, params: dict):
    run = {k: v for k, v in run_cfg.to_dict().items() if k not in ("dataset", "out")}
    config = {"model": model_cfg.to_dict(), "run": run}
    checkpoint.save_model(path, config, params, {"__epoch__": np.array([epoch], dtype=np.float64)})


def load_checkpoint(path) -> tuple[ModelConfig, dict]:
    config, params, _ = checkpoint.load_model(path)
    return ModelConfig.from_dict(config["model"]), params


def train(cfg: RunConfig, dataset: SequenceBatch | None = None) -> TrainResult:
    ds = dataset if dataset is not None else read_dataset(cfg.dataset)
    ds.check_window(cfg.window)
    os.makedirs(cfg.out, exist_ok=True)
    best_path = os.path.join(cfg.out, "checkpoint.o2vc")
    last_path = os.path.join(cfg.out, "last.o2vc")
    metrics_path = os.path.join(cfg.out, "metrics.csv")
    val_path = os.path.join(cfg.out, "validation.csv")

    with precision(cfg.precision):
        model_cfg = cfg.model_config(ds.frame_dim, ds.sensor)
        params = init_model(model_cfg, cfg.seed)
        names = list(params)
        state = adam_init(list(params.values()), lr=cfg.lr)
        train_idx, val_idx = split_validation(ds.n_sequences, cfg.val_fraction, cfg.seed)
        val = ds.subset(val_idx)
        result = TrainResult(best_path, last_path, metrics_path, val_path)
        best = -np.inf
        since_best = 0
        step = 0
        save_checkpoint(last_path, cfg, model_cfg, -1, params)
        with open(metrics_path, "w", buffering=1) as metrics, open(val_path, "w", buffering=1) as vfile:
            metrics.write(",".join(METRIC_COLUMNS) + "\n")
            vfile.write("epoch,val_total\n")
            for epoch in range(cfg.epochs):
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 1]))
                order = rng.permutation(train_idx)
                for start in range(0, len(order), cfg.batch_size):
                    idx = np.sort(order[start : start + cfg.batch_size])
                    batch = random_crops(ds.subset(idx), cfg.crop_len, cfg.window, rng)
                    tape = Tape()
                    bound = bind(model_cfg, params, tape)
                    lb = penalized_loss(batch, bound, epoch, seed=[cfg.seed, epoch, step])
                    if not _finite(lb):
                        raise TrainingAborted(
                            f"non-finite loss at epoch {epoch} step {step}; last good checkpoint kept at {last_path}"
                        )
                    grads = backprop(tape, -lb.total)
                    new, state = adam_step(
                        state, [params[k] for k in names], [grads[bound.tensors[k].node] for k in names], names
                    )
                    params = dict(zip(names, new))
                    tape.release()
                    row = lb.row()
                    metrics.write(",".join([_fmt(step)] + [_fmt(row[c]) for c in METRIC_COLUMNS[1:]]) + "\n")
                    step += 1
                vt = validation_total(model_cfg, params, val, cfg.seed) if val.n_sequences else float(lb.total.data)
                result.val_history.append(vt)
                vfile.write(f"{epoch},{_fmt(vt)}\n")
                save_checkpoint(last_path, cfg, model_cfg, epoch, params)
                if vt > best:
                    best = vt
                    since_best = 0
                    save_checkpoint(best_path, cfg, model_cfg, epoch, params)
                else:
                    since_best += 1
                log.info("epoch %d  val_total %.4f  best %.4f", epoch, vt, best)
                if since_best >= cfg.patience:
                    result.stopped_early = True
                    break
        result.steps = step
    return result
