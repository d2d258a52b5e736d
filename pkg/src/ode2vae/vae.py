"""Amortised initial-state encoders, position-only decoder, diagonal Gaussians."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, get_dtype
from .nn import MLPSpec, mlp_forward

LOG_VAR_CLAMP = (-10.0, 10.0)
PROB_CLAMP = (1e-6, 1.0 - 1e-6)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class GaussianDiag:
    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.log_var = as_tensor(self.log_var)
        if self.mean.shape != self.log_var.shape:
            raise ValueError(f"mean {self.mean.shape} and log_var {self.log_var.shape} differ")

    @classmethod
    def standard(cls, shape) -> "GaussianDiag":
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


@dataclass
class DecoderOut:
    kind: str
    params: Tensor
    log_var: Tensor | None = None


def _split_heads(out: Tensor) -> GaussianDiag:
    d = out.shape[-1] // 2
    return GaussianDiag(out[..., :d], out[..., d:].clip(*LOG_VAR_CLAMP))


def encode_position(spec: MLPSpec, params, x0) -> GaussianDiag:
    """q(s_0 | x_0) from the first frame, ``x0`` shaped ``(B, D)``."""
    x0 = as_tensor(x0)
    if x0.shape[-1] != spec.n_in:
        raise ValueError(f"frame width {x0.shape[-1]} != encoder input {spec.n_in}")
    return _split_heads(mlp_forward(spec, params, x0))


def encode_velocity(spec: MLPSpec, params, window, m: int) -> GaussianDiag:
    """q(v_0 | x_{0:m}) from ``window`` shaped ``(B, m, D)``; frames are concatenated in order."""
    window = as_tensor(window)
    if window.ndim != 3 or window.shape[1] != m:
        raise ValueError(f"velocity encoder needs a window of {m} frames, got shape {window.shape}")
    B, _, D = window.shape
    if m * D != spec.n_in:
        raise ValueError(f"window width {m}x{D} != encoder input {spec.n_in}")
    return _split_heads(mlp_forward(spec, params, window.reshape(B, m * D)))


def gaussian_sample(g: GaussianDiag, seed=None, eps=None) -> Tensor:
    """Reparameterised draw ``mean + exp(log_var / 2) * eps``."""
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(g.mean.shape).astype(get_dtype())
    return g.mean + (0.5 * g.log_var).exp() * Tensor(np.asarray(eps, dtype=get_dtype()))


def gaussian_logpdf(g: GaussianDiag, x) -> Tensor:
    """Log density summed over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] != g.mean.shape[-1]:
        raise ValueError(f"point width {x.shape[-1]} != distribution width {g.mean.shape[-1]}")
    resid = (x - g.mean).square() * (-g.log_var).exp()
    return (-_HALF_LOG_2PI - 0.5 * g.log_var - 0.5 * resid).sum(axis=-1)


def standard_normal_logpdf(x) -> Tensor:
    x = as_tensor(x)
    return (-_HALF_LOG_2PI - 0.5 * x.square()).sum(axis=-1)


def kl_diag_gaussians(q: GaussianDiag, p: GaussianDiag) -> Tensor:
    """KL[q || p] for diagonal Gaussians, summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError("distributions have different widths")
    ratio = (q.log_var - p.log_var).exp()
    diff = (q.mean - p.mean).square() * (-p.log_var).exp()
    return (0.5 * (ratio + diff - 1.0 - (q.log_var - p.log_var))).sum(axis=-1)


def kl_to_standard(q: GaussianDiag) -> Tensor:
    return (0.5 * (q.log_var.exp() + q.mean.square() - 1.0 - q.log_var)).sum(axis=-1)


def decode(spec: MLPSpec, params, s, kind: str, log_var=None) -> DecoderOut:
    """Frame likelihood parameters from latent positions ``s`` shaped ``(B, d)``.

    The decoder input is the position only; a ``2d``-wide state is rejected.
    """
    s = as_tensor(s)
    if s.shape[-1] != spec.n_in:
        raise ValueError(
            f"decoder takes positions of width {spec.n_in}, got width {s.shape[-1]}"
        )
    out = mlp_forward(spec, params, s)
    if kind == "bernoulli":
        if spec.output_activation != "sigmoid":
            raise ValueError("bernoulli decoder needs a sigmoid output layer")
        return DecoderOut("bernoulli", out)
    if kind == "gaussian":
        if log_var is None:
            raise ValueError("gaussian decoder needs a global log-variance")
        return DecoderOut("gaussian", out, as_tensor(log_var))
    raise ValueError(f"unknown likelihood {kind!r}")


def log_likelihood(x, out: DecoderOut) -> Tensor:
    """Per-row log p(x | s), summed over the last axis."""
    x = as_tensor(x)
    if x.shape != out.params.shape:
        raise ValueError(f"data {x.shape} and decoder output {out.params.shape} differ")
    if out.kind == "bernoulli":
        if np.any(x.data < 0.0) or np.any(x.data > 1.0):
            raise ValueError("bernoulli likelihood needs data in [0, 1]")
        p = out.params.clip(*PROB_CLAMP)
        return (x * p.log() + (1.0 - x) * (1.0 - p).log()).sum(axis=-1)
    lv = out.log_var
    resid = (x - out.params).square() * (-lv).exp()
    return (-_HALF_LOG_2PI - 0.5 * lv - 0.5 * resid).sum(axis=-1)


def mean_prediction(out: DecoderOut) -> np.ndarray:
    """Point prediction of a frame: pixel probabilities or the Gaussian mean."""
    return out.params.data
