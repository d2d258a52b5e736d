import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ode2vae.autodiff import Tensor
from ode2vae.data import SequenceBatch
from ode2vae.model import ModelConfig, bind, dynamics_spec, init_model
from ode2vae.objective import (
    compute_beta,
    consistency_terms,
    draw_noise,
    elbo,
    enc_consistency,
    gamma_schedule,
    model_beta,
    objective,
    penalized_loss,
    time_groups,
)


def make_case(L=4, D=5, d=2, m=2, n=4, mode="second", weight_mode="bayesian", likelihood="gaussian", seed=0,
              irregular=True, **cfg_kw):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(frame_dim=D, latent_dim=d, window=m, likelihood=likelihood, dynamics_mode=mode,
                      weight_mode=weight_mode, enc_hidden=(6,), dec_hidden=(6,), dyn_hidden=(5, 5),
                      log_s_init=-1.5, refine=3, **cfg_kw)
    params = init_model(cfg, seed)
    for k in params:
        if k not in ("bnn.log_s", "dec.log_var"):
            params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    times = np.tile(np.arange(L) * 0.15, (n, 1))
    if irregular and L > 1:
        times[1] = np.cumsum(np.r_[0.0, rng.uniform(0.05, 0.3, L - 1)])
        times[3 % n] = times[1]
    frames = rng.random((n, L, D))
    mask = np.ones((n, L), dtype=bool)
    batch = SequenceBatch(times, frames, mask, (D,))
    noise = draw_noise([seed, 9], n, bind(cfg, params).posterior.n_weights, d)
    return cfg, params, batch, noise


def reference(cfg, params, batch, noise, gamma=0.0, beta=None):
    return oracles.objective(cfg, params, batch.times, batch.frames, batch.mask, noise.weights, noise.z0,
                             gamma=gamma, beta=beta)


@pytest.mark.parametrize("mode", ["second", "first"])
@pytest.mark.parametrize("weight_mode", ["bayesian", "deterministic"])
@pytest.mark.parametrize("likelihood", ["gaussian", "bernoulli"])
def test_matches_independent_recomposition(mode, weight_mode, likelihood):
    cfg, params, batch, noise = make_case(mode=mode, weight_mode=weight_mode, likelihood=likelihood)
    batch.mask[2, 2] = False
    lb = objective(batch, bind(cfg, params), gamma=0.3, noise=noise)
    ref = reference(cfg, params, batch, noise, gamma=0.3)
    row = lb.row()
    for key in ("weight_kl", "vae_term", "dynamic_term", "enc_consistency", "total", "beta"):
        assert row[key] == pytest.approx(ref[key], abs=1e-10, rel=1e-12), key


def test_two_frame_toy_matches_recomposition():
    cfg, params, batch, noise = make_case(L=2, D=2, d=1, m=1, n=2, irregular=False)
    lb = elbo(batch, bind(cfg, params), noise=noise)
    ref = reference(cfg, params, batch, noise)
    assert lb.total.item() == pytest.approx(ref["total"], abs=1e-10)


def test_loss_breakdown_invariant():
    cfg, params, batch, noise = make_case()
    lb = objective(batch, bind(cfg, params), gamma=0.7, noise=noise)
    row = lb.row()
    recomposed = -row["beta"] * row["weight_kl"] + row["vae_term"] + row["dynamic_term"] - 0.7 * row["enc_consistency"]
    assert row["total"] == pytest.approx(recomposed, abs=1e-10)


@pytest.mark.parametrize("weight_mode", ["bayesian", "deterministic"])
@pytest.mark.parametrize("m", [1, 3])
def test_single_frame_reduces_to_vae(weight_mode, m):
    cfg, params, batch, noise = make_case(L=1, m=m, weight_mode=weight_mode)
    lb = elbo(batch, bind(cfg, params), noise=noise)
    expected = oracles.vae_elbo(params, batch.frames, noise.z0, cfg.latent_dim, m, cfg.likelihood).mean()
    assert lb.dynamic_term.item() == 0.0
    assert lb.enc_consistency.item() == 0.0
    assert lb.vae_term.item() == pytest.approx(expected, abs=1e-10)
    assert lb.total.item() == pytest.approx(expected - lb.beta * lb.weight_kl.item(), abs=1e-10)


def test_masked_frames_drop_out():
    cfg, params, batch, noise = make_case(m=1)
    batch.mask[:, 1:] = False
    lb = elbo(batch, bind(cfg, params), noise=noise)
    assert lb.dynamic_term.item() == 0.0
    assert lb.enc_consistency.item() == 0.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_masked_frame_content_is_irrelevant(seed):
    cfg, params, batch, noise = make_case(L=5)
    batch.mask[0, 3] = False
    batch.mask[2, 4] = False
    a = objective(batch, bind(cfg, params), gamma=0.5, noise=noise).total.item()
    rng = np.random.default_rng(seed)
    batch.frames[0, 3] = rng.random(batch.frame_dim)
    batch.frames[2, 4] = rng.random(batch.frame_dim)
    b = objective(batch, bind(cfg, params), gamma=0.5, noise=noise).total.item()
    assert a == b


def test_consistency_skips_short_tails():
    cfg, params, batch, noise = make_case(L=3, m=3)
    assert enc_consistency(batch, bind(cfg, params), noise=noise).item() == 0.0
    cfg, params, batch, noise = make_case(L=4, m=3)
    batch.mask[:, 3] = False
    assert enc_consistency(batch, bind(cfg, params), noise=noise).item() == 0.0


def test_consistency_zero_mean_when_flow_matches_encoder():
    """ODE-side samples drawn from each window's own encoder give a zero-mean estimate."""
    cfg, params, batch, _ = make_case(L=6, m=2, n=3)
    d, m = cfg.latent_dim, cfg.window
    n_win = batch.seq_len - 1 - m + 1
    rng = np.random.default_rng(0)
    estimates = []
    for _ in range(100):
        S = np.zeros((3, batch.seq_len - 1, d))
        V = np.zeros_like(S)
        LQ = np.zeros((3, batch.seq_len - 1))
        for b in range(3):
            for i in range(1, batch.seq_len):
                x = batch.frames[b]
                win = x[i : i + m] if i + m <= batch.seq_len else np.repeat(x[i : i + 1], m, 0)
                mu, lv = oracles.encode(params, x[i], win, d)
                z = mu + np.exp(0.5 * lv) * rng.standard_normal(2 * d)
                S[b, i - 1], V[b, i - 1] = z[:d], z[d:]
                LQ[b, i - 1] = oracles.gauss_logpdf(z, mu, lv)
        est = consistency_terms(bind(cfg, params), batch.frames, batch.mask, Tensor(S), Tensor(V), Tensor(LQ))
        estimates.append(est.data.mean())
    estimates = np.array(estimates)
    assert n_win == 4
    assert abs(estimates.mean()) <= 3 * estimates.std() / np.sqrt(len(estimates)) + 1e-12


def test_gamma_schedule():
    assert gamma_schedule(0, 1.0, 50) == 0.0
    assert gamma_schedule(50, 1.0, 50) == 1.0
    assert gamma_schedule(80, 2.0, 50) == 2.0
    assert gamma_schedule(25, 1.0, 50) == 0.5
    assert gamma_schedule(3, 0.7, 0) == 0.7


def test_beta_examples():
    assert compute_beta(6, 600) == 0.01
    assert compute_beta(7, 7) == 1.0
    cfg = ModelConfig(frame_dim=4)
    count = oracles.param_count((4, 64, 64, 2))
    assert count == 4610
    assert dynamics_spec(cfg).param_count() == count
    assert model_beta(bind(cfg, init_model(cfg, 0))) == 4 / count
    with pytest.raises(ValueError):
        compute_beta(0, 3)


@pytest.mark.parametrize(
    "d, hidden, mode",
    [(2, (64, 64), "second"), (3, (32,), "second"), (1, (16, 16, 16), "second"), (2, (64, 64), "first"), (4, (8, 12), "first")],
)
def test_beta_matches_independent_count(d, hidden, mode):
    cfg = ModelConfig(frame_dim=3, latent_dim=d, dyn_hidden=hidden, dynamics_mode=mode)
    widths = (2 * d, *hidden, d if mode == "second" else 2 * d)
    assert model_beta(bind(cfg, init_model(cfg, 0))) == 2 * d / oracles.param_count(widths)


def test_gamma_zero_matches_elbo_and_beta_override():
    cfg, params, batch, noise = make_case(gamma_max=0.0)
    a = penalized_loss(batch, bind(cfg, params), epoch=100, noise=noise).total.item()
    b = elbo(batch, bind(cfg, params), noise=noise).total.item()
    assert a == b
    cfg1, params1, batch1, noise1 = make_case(beta=1.0, gamma_max=0.0)
    lb = penalized_loss(batch1, bind(cfg1, params1), epoch=10, noise=noise1)
    ref = reference(cfg1, params1, batch1, noise1, beta=1.0)
    assert lb.beta == 1.0
    assert lb.total.item() == pytest.approx(ref["total"], abs=1e-10)


def test_penalized_uses_schedule():
    cfg, params, batch, noise = make_case(gamma_max=2.0, anneal_epochs=10)
    lb = penalized_loss(batch, bind(cfg, params), epoch=5, noise=noise)
    assert lb.gamma == 1.0
    ref = reference(cfg, params, batch, noise, gamma=1.0)
    assert lb.total.item() == pytest.approx(ref["total"], abs=1e-10)


def test_seeded_noise_is_deterministic():
    cfg, params, batch, _ = make_case()
    a = elbo(batch, bind(cfg, params), seed=5).total.item()
    b = elbo(batch, bind(cfg, params), seed=5).total.item()
    c = elbo(batch, bind(cfg, params), seed=6).total.item()
    assert a == b and a != c


def test_time_groups():
    times = np.array([[0, 1, 2], [0, 0.5, 2], [0, 1, 2.0000001], [0, 0.5, 2]])
    groups = time_groups(times)
    assert [g.tolist() for g in groups] == [[0, 2], [1, 3]]


def test_loss_finite_for_extreme_frames():
    cfg, params, batch, noise = make_case(likelihood="bernoulli")
    batch.frames[:] = np.round(batch.frames)
    lb = objective(batch, bind(cfg, params), gamma=1.0, noise=noise)
    assert all(np.isfinite(v) for v in lb.row().values())
