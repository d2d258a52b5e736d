"""Finite-difference audit of the full penalised objective on a toy batch."""

from __future__ import annotations

import time

import numpy as np

from ..autodiff import grad_check, precision
from ..data import SequenceBatch
from ..model import ModelConfig, bind, init_model, parameter_groups
from ..objective import draw_noise, objective

TOLERANCE = 1e-4


def toy_problem(weight_mode: str = "bayesian", dynamics_mode: str = "second", likelihood: str = "bernoulli",
                seed: int = 0, n_seq: int = 3):
    """Small model and batch: D=16, d=2, N=4 subsequent frames, m=2, frozen noise.

    The sequences share one irregular time grid (a single batched solve keeps
    the check fast) and one frame is masked.
    """
    rng = np.random.default_rng(seed)
    D, d, L, m = 16, 2, 5, 2
    cfg = ModelConfig(
        frame_dim=D, latent_dim=d, window=m, likelihood=likelihood, dynamics_mode=dynamics_mode,
        weight_mode=weight_mode, enc_hidden=(8,), dec_hidden=(8,), dyn_hidden=(8,), log_s_init=-2.0, refine=2,
    )
    params = init_model(cfg, seed)
    for k, v in params.items():
        if k.split(".")[-1].startswith("b") and k != "bnn.m":
            params[k] = v + 0.1 * rng.standard_normal(v.shape)
    if "dec.log_var" in params:
        params["dec.log_var"] = np.array(-0.5)
    times = np.tile([0.0, 0.07, 0.2, 0.26, 0.4], (n_seq, 1))
    frames = rng.random((n_seq, L, D))
    mask = np.ones((n_seq, L), dtype=bool)
    mask[0, 3] = False
    batch = SequenceBatch(times, frames, mask, (D,))
    noise = draw_noise([seed, 1], n_seq, bind(cfg, params).posterior.n_weights, d)
    return cfg, params, batch, noise


def group_errors(cfg: ModelConfig, params: dict, batch: SequenceBatch, noise, gamma: float = 0.5,
                 eps: float = 1e-5) -> dict:
    """Max relative FD error of the objective total per parameter group."""
    out = {}
    for group, names in parameter_groups(params).items():
        worst = 0.0
        for name in names:
            def f(x, name=name):
                return objective(batch, bind(cfg, params, replace={name: x}), gamma=gamma, noise=noise).total

            worst = max(worst, grad_check(f, params[name], eps))
        out[group] = worst
    return out


def run_gradcheck(weight_modes=("bayesian", "deterministic"), dynamics_modes=("second",), seed: int = 0,
                  log=print) -> bool:
    """Check every parameter group in every requested mode; True when all pass."""
    ok = True
    with precision("float64"):
        for wm in weight_modes:
            for dm in dynamics_modes:
                start = time.perf_counter()
                cfg, params, batch, noise = toy_problem(wm, dm, seed=seed)
                errors = group_errors(cfg, params, batch, noise)
                for group, err in errors.items():
                    status = "ok" if err < TOLERANCE else "FAIL"
                    ok &= err < TOLERANCE
                    log(f"{wm:13s} {dm:6s} {group:8s} max_rel_err={err:.3e} {status}")
                log(f"{wm:13s} {dm:6s} elapsed {time.perf_counter() - start:.1f}s")
    return ok
