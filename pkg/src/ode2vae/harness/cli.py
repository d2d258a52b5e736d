"""Command-line entry point: ``ode2vae gen|train|forecast|eval|gradcheck|export-phase``.

Exit codes: 0 success, 1 validation failure (bad input, bad config, failed
gradient check), 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from .. import checkpoint
from ..autodiff import precision
from ..data import DatasetFormatError, gen_bouncing_balls, gen_pendulum, gen_rotating_sprite, read_dataset, write_dataset
from . import report
from .artifacts import dump_frames, load_forecast, save_forecast, write_phase_csv
from .config import RunConfig, load_config
from .evaluate import (
    linear_extrapolation_baseline,
    mse_table,
    nearest_observed_baseline,
    repeat_last_baseline,
    write_table,
)
from .forecast import forecast
from .gradcheck import run_gradcheck
from .train import TrainingAborted, load_checkpoint, train

log = logging.getLogger("ode2vae")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # every RunConfig field becomes --field-name; values are parsed like the config file
    for f in dataclasses.fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ode2vae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("kind", choices=("pendulum", "sprite", "balls"))
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=100, help="number of sequences")
    g.add_argument("--seq-len", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dt", type=float, help="time between frames (generator default if omitted)")
    g.add_argument("--irregular", action="store_true", help="pendulum: jittered time stamps")
    g.add_argument("--noise-std", type=float, default=0.02, help="pendulum sensor noise")
    g.add_argument("--split", choices=("train", "eval"), default="train", help="sprite masking protocol")
    g.add_argument("--n-angles", type=int, default=16)
    g.add_argument("--holdout-angle", type=int, default=8)
    g.add_argument("--n-drop", type=int, default=4)
    g.add_argument("--n-balls", type=int, default=1)
    g.add_argument("--grid", type=int, default=16)

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--config", help="key = value file; flags override it")
    t.add_argument("--report", action="store_true", help="plot metrics.csv")
    _add_run_flags(t)

    f = sub.add_parser("forecast", help="sample predictions from the first m frames")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--dataset", required=True)
    f.add_argument("--out", required=True, help="forecast container (.o2vc)")
    f.add_argument("--n-samples", type=int, default=50)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--mean-weights", action="store_true", help="posterior and encoder means only")
    f.add_argument("--latents-csv", help="also write latent trajectories")
    f.add_argument("--pgm-dir", help="also dump image frames as PGM")

    e = sub.add_parser("eval", help="per-horizon MSE table")
    e.add_argument("--predictions", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True, help="CSV path")
    e.add_argument("--report", action="store_true", help="plot the table next to the CSV")

    c = sub.add_parser("gradcheck", help="finite-difference audit of the objective")
    c.add_argument("--weight-modes", default="bayesian,deterministic")
    c.add_argument("--dynamics-modes", default="second")
    c.add_argument("--seed", type=int, default=0)

    x = sub.add_parser("export-phase", help="latent phase-space CSV and plot")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--out", required=True, help="CSV path")
    x.add_argument("--n-samples", type=int, default=1)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--mean-weights", action="store_true")
    x.add_argument("--no-plot", action="store_true")
    return parser


def cmd_gen(a) -> int:
    extra = {} if a.dt is None else {"dt": a.dt}
    if a.kind == "pendulum":
        ds = gen_pendulum(a.n, a.seq_len, seed=a.seed, irregular=a.irregular, noise_std=a.noise_std, **extra)
    elif a.kind == "sprite":
        ds = gen_rotating_sprite(a.n, n_angles=a.n_angles, holdout_angle=a.holdout_angle, n_drop=a.n_drop,
                                 seed=a.seed, split=a.split, **extra)
    else:
        ds = gen_bouncing_balls(a.n, seq_len=a.seq_len, n_balls=a.n_balls, grid=a.grid, seed=a.seed, **extra)
    write_dataset(a.out, ds)
    log.info("wrote %d sequences of %d frames to %s", ds.n_sequences, ds.seq_len, a.out)
    return EXIT_OK


def cmd_train(a) -> int:
    overrides = {f.name: getattr(a, f.name) for f in dataclasses.fields(RunConfig)}
    cfg = load_config(a.config, overrides)
    if not cfg.dataset:
        raise ValueError("no dataset given (--dataset or dataset = ... in the config)")
    res = train(cfg)
    log.info("%d steps; best checkpoint %s", res.steps, res.best_checkpoint)
    if a.report:
        report.plot_training(res.metrics_csv)
    return EXIT_OK


def _load_model(path):
    cfg, params = load_checkpoint(path)
    dtype = next(iter(params.values())).dtype
    return cfg, params, "float64" if dtype == np.float64 else "float32"


def _forecast(a):
    cfg, params, prec = _load_model(a.checkpoint)
    ds = read_dataset(a.dataset)
    ds.check_window(cfg.window)
    if ds.frame_dim != cfg.frame_dim:
        raise ValueError(f"dataset frame width {ds.frame_dim} != model frame width {cfg.frame_dim}")
    with precision(prec):
        fc = forecast(cfg, params, ds.times, ds.frames[:, : cfg.window], n_samples=a.n_samples, seed=a.seed,
                      mean_weights=a.mean_weights)
    return cfg, ds, fc


def cmd_forecast(a) -> int:
    cfg, ds, fc = _forecast(a)
    save_forecast(a.out, fc, cfg.window, ds.frame_shape)
    if a.latents_csv:
        write_phase_csv(a.latents_csv, fc)
    if a.pgm_dir:
        if ds.sensor:
            raise ValueError("PGM dumps need image data")
        dump_frames(fc.frames, a.pgm_dir, ds.frame_shape)
    log.info("forecast %s sequences x %d samples -> %s", ds.n_sequences, a.n_samples, a.out)
    return EXIT_OK


def cmd_eval(a) -> int:
    fc, m, _ = load_forecast(a.predictions)
    ds = read_dataset(a.dataset)
    if fc.frames.shape[0] != ds.n_sequences or fc.frames.shape[2:] != ds.frames.shape[1:]:
        raise ValueError(f"predictions {fc.frames.shape} are not aligned with dataset {ds.frames.shape}")
    rows = mse_table(fc.frames, ds.frames, m)
    write_table(a.out, rows)
    for r in rows:
        print(f"horizon {r['horizon']:3d}  mse {r['mse_mean']:.6f} +- {r['mse_std']:.6f}  "
              f"mean-pred {r['mse_of_mean']:.6f}")
    baselines = {"repeat last": [r["mse_mean"] for r in mse_table(repeat_last_baseline(ds.frames, m), ds.frames, m)]}
    if m >= 2:
        lin = linear_extrapolation_baseline(ds.frames, ds.times, m)
        baselines["linear"] = [r["mse_mean"] for r in mse_table(lin, ds.frames, m)]
    hidden = ~ds.mask
    if hidden.any():
        pred = np.asarray(fc.frames, dtype=np.float64).mean(axis=1)
        near = nearest_observed_baseline(ds.frames, ds.mask, hidden)
        truth = np.asarray(ds.frames, dtype=np.float64)
        print(f"unobserved frames: model mse {((pred - truth)[hidden] ** 2).mean():.6f}  "
              f"nearest-observed mse {((near - truth)[hidden] ** 2).mean():.6f}")
    if a.report:
        report.plot_horizon(a.out, baselines)
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    ok = run_gradcheck(tuple(a.weight_modes.split(",")), tuple(a.dynamics_modes.split(",")), seed=a.seed)
    print("gradcheck", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_export_phase(a) -> int:
    _, _, fc = _forecast(a)
    write_phase_csv(a.out, fc)
    if not a.no_plot:
        report.plot_phase(a.out)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-phase": cmd_export_phase,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"ode2vae: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    threads = os.environ.get("ODE2VAE_THREADS", "1").strip()
    if not threads.isdigit() or int(threads) < 1:
        print("ode2vae: ODE2VAE_THREADS must be a positive integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, DatasetFormatError, checkpoint.CheckpointFormatError, FileNotFoundError) as exc:
        print(f"ode2vae {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingAborted as exc:
        print(f"ode2vae {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything unforeseen is a runtime failure
        print(f"ode2vae {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
