"""Sampling forecasts from the first ``m`` frames of each sequence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, get_dtype
from ..bnn import sample_from_noise
from ..model import ModelConfig, bind
from ..objective import encode_initial, time_groups, trace_options
from ..ode import AugmentedState, TimeGrid, rk4_solve
from ..vae import GaussianDiag, decode, gaussian_logpdf, gaussian_sample


@dataclass
class Forecast:
    """``frames`` (n, K, L, D) decoded predictions; latents (n, K, L, d); ``logq`` (n, K, L)."""

    times: np.ndarray
    frames: np.ndarray
    s: np.ndarray
    v: np.ndarray
    logq: np.ndarray


def forecast(cfg: ModelConfig, params: dict, times: np.ndarray, frames, n_samples: int = 50, seed=0,
             mean_weights: bool = False) -> Forecast:
    """Encode z_0 from ``frames[:, :m]`` and integrate every (W, z_0) sample over ``times``.

    Only ``frames[:, :m]`` is read. ``n_samples`` joint draws of the weights
    and the initial state are made per sequence. With ``mean_weights`` the
    posterior mean is used for W and the encoder mean for z_0.
    """
    m = cfg.window
    cond = np.asarray(frames[:, :m], dtype=get_dtype())
    times = np.asarray(times, dtype=np.float64)
    n, L = times.shape
    if cond.shape[1] < m:
        raise ValueError(f"sequences need at least {m} leading frames, got {cond.shape[1]}")
    if L < m:
        raise ValueError(f"sequence length {L} shorter than the conditioning window {m}")
    K = int(n_samples)
    d = cfg.latent_dim
    model = bind(cfg, params)
    rng_w, rng_z, rng_p = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    P = model.posterior.n_weights
    eps_w = rng_w.standard_normal((n, K, P)).astype(get_dtype())
    eps_z = rng_z.standard_normal((n, K, 2 * d)).astype(get_dtype())
    if mean_weights:
        eps_w[:] = 0.0
        eps_z[:] = 0.0
    probe_seed = int(rng_p.integers(2**31))

    q0 = encode_initial(model, cond)
    D = model.dec_spec.n_out
    out_frames = np.empty((n, K, L, D), dtype=get_dtype())
    out_s = np.empty((n, K, L, d), dtype=get_dtype())
    out_v = np.empty((n, K, L, d), dtype=get_dtype())
    out_lq = np.empty((n, K, L), dtype=get_dtype())
    for rows in time_groups(times):
        b = len(rows)
        mean = np.repeat(q0.mean.data[rows], K, axis=0)
        log_var = np.repeat(q0.log_var.data[rows], K, axis=0)
        q = GaussianDiag(Tensor(mean), Tensor(log_var))
        z0 = gaussian_sample(q, eps=eps_z[rows].reshape(b * K, 2 * d))
        logq0 = gaussian_logpdf(q, z0)
        sample = sample_from_noise(model.posterior, eps_w[rows].reshape(b * K, P))
        init = AugmentedState(z0[:, :d], z0[:, d:], logq0, float(times[rows[0], 0]))
        states = [init]
        if L > 1:
            states += rk4_solve(sample, init, TimeGrid(times[rows[0]], cfg.refine), cfg.dynamics_mode,
                                trace_options(cfg, probe_seed))
        S = np.stack([st.s.data for st in states], axis=1)  # (b*K, L, d)
        V = np.stack([st.v.data for st in states], axis=1)
        LQ = np.stack([st.logq.data for st in states], axis=1)
        dec = decode(model.dec_spec, model.dec_params, Tensor(S.reshape(-1, d)), cfg.likelihood, model.dec_log_var)
        out_frames[rows] = dec.params.data.reshape(b, K, L, D)
        out_s[rows] = S.reshape(b, K, L, d)
        out_v[rows] = V.reshape(b, K, L, d)
        out_lq[rows] = LQ.reshape(b, K, L)
    return Forecast(times, out_frames, out_s, out_v, out_lq)
