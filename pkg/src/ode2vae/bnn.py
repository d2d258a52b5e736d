"""Bayesian acceleration network with a shared-variance Gaussian weight posterior."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, concat, get_dtype
from .nn import MLPSpec, init_params, mlp_forward, mlp_forward_jvp

DEFAULT_LOG_S = -6.0


@dataclass
class BNNPosterior:
    """q(W) = N(m, s I) over the flattened dynamics-network parameters.

    In deterministic mode the variance is frozen at zero and the weight KL is
    replaced by an L2 penalty ``0.5 * weight_decay * ||m||^2``.
    """

    m: Tensor
    log_s: Tensor
    spec: MLPSpec
    deterministic: bool = False
    weight_decay: float = 1e-4

    def __post_init__(self):
        self.m = as_tensor(self.m)
        self.log_s = as_tensor(self.log_s)
        if self.m.shape != (self.spec.param_count(),):
            raise ValueError(
                f"mean vector has shape {self.m.shape}, spec needs ({self.spec.param_count()},)"
            )

    @property
    def n_weights(self) -> int:
        return self.spec.param_count()


def init_posterior(spec: MLPSpec, seed: int, log_s: float = DEFAULT_LOG_S, deterministic=False) -> BNNPosterior:
    flat = np.concatenate([p.reshape(-1) for p in init_params(spec, seed)])
    return BNNPosterior(m=Tensor(flat), log_s=Tensor(log_s), spec=spec, deterministic=deterministic)


@dataclass
class WeightSample:
    """One reparameterised draw ``w = m + exp(log_s / 2) * eps``.

    ``w`` is ``(P,)`` for a single network or ``(B, P)`` for one network per
    batch row. ``evaluations`` counts forward calls that used this draw.
    """

    w: Tensor
    eps: np.ndarray
    spec: MLPSpec
    evaluations: int = 0
    _layers: list = field(default=None, repr=False)

    @property
    def batched(self) -> bool:
        return self.w.ndim == 2

    def layers(self) -> list:
        if self._layers is None:
            self._layers = unflatten(self.spec, self.w)
        return self._layers


def unflatten(spec: MLPSpec, w: Tensor) -> list:
    """Split a flat weight vector (or a ``(B, P)`` stack) into per-layer tensors."""
    w = as_tensor(w)
    out = []
    offset = 0
    batched = w.ndim == 2
    for shape in spec.param_shapes():
        n = int(np.prod(shape))
        if batched:
            piece = w[:, offset : offset + n]
            target = (w.shape[0],) + shape if len(shape) == 2 else (w.shape[0], 1) + shape
            out.append(piece.reshape(target))
        else:
            out.append(w[offset : offset + n].reshape(shape))
        offset += n
    if offset != w.shape[-1]:
        raise ValueError(f"weight vector has {w.shape[-1]} entries, spec needs {offset}")
    return out


def sample_weights(post: BNNPosterior, seed, n: int | None = None) -> WeightSample:
    """Draw ``n`` weight vectors (or one when ``n`` is None) by reparameterisation."""
    rng = np.random.default_rng(seed)
    shape = (post.n_weights,) if n is None else (n, post.n_weights)
    if post.deterministic:
        eps = np.zeros(shape, dtype=get_dtype())
        w = post.m if n is None else post.m.broadcast_to(shape)
        return WeightSample(w=w, eps=eps, spec=post.spec)
    eps = rng.standard_normal(shape).astype(get_dtype())
    return sample_from_noise(post, eps)


def sample_from_noise(post: BNNPosterior, eps: np.ndarray) -> WeightSample:
    """Reparameterised sample with caller-supplied noise (used to freeze noise in checks)."""
    eps = np.asarray(eps, dtype=get_dtype())
    if post.deterministic:
        eps = np.zeros_like(eps)
        w = post.m if eps.ndim == 1 else post.m.broadcast_to(eps.shape)
        return WeightSample(w=w, eps=eps, spec=post.spec)
    w = post.m + (0.5 * post.log_s).exp() * Tensor(eps)
    return WeightSample(w=w, eps=eps, spec=post.spec)


def kl_weights(post: BNNPosterior) -> Tensor:
    """KL[q(W) || N(0, I)] in closed form (or the L2 surrogate in deterministic mode)."""
    sq = post.m.square().sum()
    if post.deterministic:
        return 0.5 * post.weight_decay * sq
    P = float(post.n_weights)
    s = post.log_s.exp()
    return 0.5 * (P * s + sq - P - P * post.log_s)


def _as_rows(sample: WeightSample, x: Tensor) -> Tensor:
    # (B, n) -> (B, 1, n) so batched weights and tangent axes line up
    return x.reshape(x.shape[0], 1, x.shape[-1])


def _check_inputs(sample: WeightSample, s, v):
    s, v = as_tensor(s), as_tensor(v)
    if s.shape != v.shape:
        raise ValueError(f"position {s.shape} and velocity {v.shape} shapes differ")
    if s.shape[-1] + v.shape[-1] != sample.spec.n_in:
        raise ValueError(
            f"state width {s.shape[-1]}+{v.shape[-1]} does not match dynamics input {sample.spec.n_in}"
        )
    if sample.batched and s.shape[0] != sample.w.shape[0]:
        raise ValueError(f"{s.shape[0]} states but {sample.w.shape[0]} weight samples")
    return s, v


def bnn_forward(sample: WeightSample, s, v) -> Tensor:
    """Network output f_W(s, v) for a batch of states ``(B, d)``."""
    s, v = _check_inputs(sample, s, v)
    sample.evaluations += 1
    x = concat([s, v], axis=-1)
    B = x.shape[0]
    out = mlp_forward(sample.spec, sample.layers(), _as_rows(sample, x))
    return out.reshape(B, sample.spec.n_out)


def bnn_forward_tangent(sample: WeightSample, s, v, start: int, width: int, directions=None):
    """Network output plus Jacobian-vector products w.r.t. input columns ``start:start+width``.

    With ``directions=None`` the standard basis of that block is used and the
    tangent is ``(B, width, out)``; row i holds d f / d x_{start+i}. Otherwise
    ``directions`` is ``(B, K, width)`` and the tangent is ``(B, K, out)``.
    """
    s, v = _check_inputs(sample, s, v)
    sample.evaluations += 1
    x = concat([s, v], axis=-1)
    B = x.shape[0]
    layers = sample.layers()
    rows = layers[0][..., start : start + width, :]
    first = rows if directions is None else as_tensor(directions) @ rows
    out, tangent = mlp_forward_jvp(sample.spec, layers, _as_rows(sample, x), first)
    if tangent.ndim != 3 or tangent.shape[0] != B:
        # single linear layer: the tangent never met a batch-shaped slope
        tangent = tangent.broadcast_to((B,) + tangent.shape[-2:])
    return out.reshape(B, sample.spec.n_out), tangent
