"""Evidence lower bound and the consistency-penalised training objective.

All quantities follow the maximisation convention; the optimiser minimises
``-total``. Sequence-level terms are averaged over the batch with a fixed
summation order; the weight KL enters once per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, get_dtype
from .bnn import kl_weights, sample_from_noise
from .data import SequenceBatch
from .model import BoundModel, ModelConfig
from .ode import AugmentedState, TimeGrid, TraceOptions, rk4_solve
from .vae import (
    GaussianDiag,
    decode,
    encode_position,
    encode_velocity,
    gaussian_logpdf,
    gaussian_sample,
    kl_to_standard,
    log_likelihood,
    standard_normal_logpdf,
)


@dataclass
class LossBreakdown:
    weight_kl: Tensor
    vae_term: Tensor
    dynamic_term: Tensor
    enc_consistency: Tensor
    total: Tensor
    beta: float
    gamma: float

    FIELDS = ("weight_kl", "vae_term", "dynamic_term", "enc_consistency", "total", "beta", "gamma")

    def row(self) -> dict:
        out = {}
        for name in self.FIELDS:
            val = getattr(self, name)
            out[name] = float(val.data) if isinstance(val, Tensor) else float(val)
        return out


@dataclass
class Noise:
    """Frozen randomness for one forward pass."""

    weights: np.ndarray  # (B, P)
    z0: np.ndarray  # (B, 2d)
    probe_seed: int


def compute_beta(latent_dim_z: int, weight_count: int) -> float:
    if latent_dim_z <= 0 or weight_count <= 0:
        raise ValueError("both dimensions must be positive")
    return latent_dim_z / weight_count


def model_beta(model: BoundModel) -> float:
    if model.cfg.beta is not None:
        return float(model.cfg.beta)
    return compute_beta(2 * model.cfg.latent_dim, model.posterior.n_weights)


def gamma_schedule(epoch: int, gamma_max: float, anneal_epochs: int) -> float:
    """Linear ramp from 0 to ``gamma_max`` over ``anneal_epochs``, constant afterwards."""
    if anneal_epochs <= 0:
        return float(gamma_max)
    return float(gamma_max) * min(max(epoch, 0) / anneal_epochs, 1.0)


def draw_noise(seed, n_seq: int, n_weights: int, latent_dim: int) -> Noise:
    rng_w, rng_z, rng_p = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    return Noise(
        weights=rng_w.standard_normal((n_seq, n_weights)).astype(get_dtype()),
        z0=rng_z.standard_normal((n_seq, 2 * latent_dim)).astype(get_dtype()),
        probe_seed=int(rng_p.integers(2**31)),
    )


def time_groups(times: np.ndarray) -> list[np.ndarray]:
    """Indices of sequences sharing identical time stamps, ordered by first member."""
    groups: dict = {}
    for i, row in enumerate(times):
        key = np.round(np.asarray(row, dtype=np.float64), 6).tobytes()
        groups.setdefault(key, []).append(i)
    return [np.array(v) for v in groups.values()]


def encode_initial(model: BoundModel, frames: np.ndarray) -> GaussianDiag:
    """q_enc(z_0) from the leading window of ``frames`` shaped ``(B, L, D)``.

    Sequences shorter than the window repeat their last frame to fill it.
    """
    m = model.cfg.window
    window = frames[:, :m]
    if window.shape[1] < m:
        pad = np.repeat(window[:, -1:], m - window.shape[1], axis=1)
        window = np.concatenate([window, pad], axis=1)
    qs = encode_position(model.pos_spec, model.pos_params, Tensor(frames[:, 0]))
    qv = encode_velocity(model.vel_spec, model.vel_params, Tensor(window), m)
    return GaussianDiag(concat([qs.mean, qv.mean], axis=-1), concat([qs.log_var, qv.log_var], axis=-1))


def decoder_loglik(model: BoundModel, s: Tensor, x: np.ndarray) -> Tensor:
    out = decode(model.dec_spec, model.dec_params, s, model.cfg.likelihood, model.dec_log_var)
    return log_likelihood(Tensor(x), out)


def trace_options(cfg: ModelConfig, probe_seed: int) -> TraceOptions:
    return TraceOptions(cfg.trace_method, cfg.trace_probes, probe_seed, cfg.max_exact_trace_dim)


def stack_states(states: list[AugmentedState]):
    """(B, N, d) positions and velocities and (B, N) log densities."""
    b, d = states[0].s.shape
    S = concat([st.s.reshape(b, 1, d) for st in states], axis=1)
    V = concat([st.v.reshape(b, 1, d) for st in states], axis=1)
    LQ = concat([st.logq.reshape(b, 1) for st in states], axis=1)
    return S, V, LQ


def _group_terms(batch: SequenceBatch, model: BoundModel, noise: Noise, rows: np.ndarray, with_consistency: bool):
    cfg = model.cfg
    d, m = cfg.latent_dim, cfg.window
    frames = batch.frames[rows].astype(get_dtype(), copy=False)
    mask = batch.mask[rows]
    times = batch.times[rows[0]].astype(np.float64)
    b, L, D = frames.shape
    N = L - 1

    q0 = encode_initial(model, frames)
    z0 = gaussian_sample(q0, eps=noise.z0[rows])
    logq0 = gaussian_logpdf(q0, z0)
    s0, v0 = z0[:, :d], z0[:, d:]
    vae = decoder_loglik(model, s0, frames[:, 0]) - kl_to_standard(q0)
    zero = Tensor(np.zeros((), dtype=get_dtype()))
    if N == 0:
        return vae.sum(), zero, zero

    sample = sample_from_noise(model.posterior, noise.weights[rows])
    init = AugmentedState(s0, v0, logq0, float(times[0]))
    states = rk4_solve(sample, init, TimeGrid(times, cfg.refine), cfg.dynamics_mode,
                       trace_options(cfg, noise.probe_seed))
    S, V, LQ = stack_states(states)
    ll = decoder_loglik(model, S.reshape(b * N, d), frames[:, 1:].reshape(b * N, D)).reshape(b, N)
    logp = standard_normal_logpdf(concat([S, V], axis=-1))
    w = mask[:, 1:].astype(get_dtype())
    dyn = ((ll - (LQ - logp)) * w).sum()

    if not with_consistency:
        return vae.sum(), dyn, zero
    return vae.sum(), dyn, consistency_terms(model, frames, mask, S, V, LQ).sum()


def consistency_terms(model: BoundModel, frames: np.ndarray, mask: np.ndarray, S: Tensor, V: Tensor, LQ: Tensor) -> Tensor:
    """Per-sequence sum over i of ``log q_ode(z_i) - log q_enc,i(z_i)`` at the ODE samples.

    ``q_enc,i`` encodes the position from x_i and the velocity from
    x_{i:i+m}; a term is skipped unless all m frames of its window exist and
    are observed. ``S``/``V``/``LQ`` are the ODE states at t_1..t_N.
    """
    cfg = model.cfg
    d, m = cfg.latent_dim, cfg.window
    b, L, D = frames.shape
    N = L - 1
    n_win = N - m + 1
    if n_win < 1:
        return Tensor(np.zeros(b, dtype=get_dtype()))
    win_ok = np.stack([mask[:, i : i + m].all(axis=1) for i in range(1, n_win + 1)], axis=1)
    pos_in = frames[:, 1 : n_win + 1].reshape(b * n_win, D)
    win_in = np.stack([frames[:, i : i + m] for i in range(1, n_win + 1)], axis=1).reshape(b * n_win, m, D)
    qs = encode_position(model.pos_spec, model.pos_params, Tensor(pos_in))
    qv = encode_velocity(model.vel_spec, model.vel_params, Tensor(win_in), m)
    q_enc = GaussianDiag(concat([qs.mean, qv.mean], axis=-1), concat([qs.log_var, qv.log_var], axis=-1))
    Z = concat([S[:, :n_win], V[:, :n_win]], axis=-1).reshape(b * n_win, 2 * d)
    log_enc = gaussian_logpdf(q_enc, Z).reshape(b, n_win)
    return ((LQ[:, :n_win] - log_enc) * win_ok.astype(get_dtype())).sum(axis=1)


def objective(batch: SequenceBatch, model: BoundModel, seed=None, gamma: float = 0.0,
              noise: Noise | None = None, with_consistency: bool = True) -> LossBreakdown:
    """Single-sample Monte Carlo estimate of the penalised bound for a batch."""
    cfg = model.cfg
    batch.check_window(min(cfg.window, batch.seq_len))
    if noise is None:
        noise = draw_noise(seed, batch.n_sequences, model.posterior.n_weights, cfg.latent_dim)
    vae_sum = dyn_sum = enc_sum = None
    for rows in time_groups(batch.times):
        v, dy, e = _group_terms(batch, model, noise, rows, with_consistency)
        vae_sum = v if vae_sum is None else vae_sum + v
        dyn_sum = dy if dyn_sum is None else dyn_sum + dy
        enc_sum = e if enc_sum is None else enc_sum + e
    B = float(batch.n_sequences)
    vae_term = vae_sum * (1.0 / B)
    dynamic_term = dyn_sum * (1.0 / B)
    enc_consistency = enc_sum * (1.0 / B)
    weight_kl = kl_weights(model.posterior)
    beta = model_beta(model)
    total = vae_term + dynamic_term - beta * weight_kl
    if gamma:
        total = total - gamma * enc_consistency
    return LossBreakdown(weight_kl, vae_term, dynamic_term, enc_consistency, total, beta, float(gamma))


def elbo(batch: SequenceBatch, model: BoundModel, seed=None, noise: Noise | None = None) -> LossBreakdown:
    return objective(batch, model, seed, gamma=0.0, noise=noise)


def penalized_loss(batch: SequenceBatch, model: BoundModel, epoch: int, seed=None,
                   noise: Noise | None = None) -> LossBreakdown:
    cfg = model.cfg
    gamma = gamma_schedule(epoch, cfg.gamma_max, cfg.anneal_epochs)
    return objective(batch, model, seed, gamma=gamma, noise=noise)


def enc_consistency(batch: SequenceBatch, model: BoundModel, seed=None, noise: Noise | None = None) -> Tensor:
    return objective(batch, model, seed, gamma=0.0, noise=noise).enc_consistency
