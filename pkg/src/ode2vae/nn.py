"""Dense networks, Glorot initialisation and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, get_dtype

ACTIVATIONS = ("tanh", "softplus", "relu")
OUTPUT_ACTIVATIONS = ("none", "sigmoid")


@dataclass(frozen=True)
class MLPSpec:
    widths: tuple
    activation: str = "tanh"
    output_activation: str = "none"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least one layer (two widths)")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def param_shapes(self) -> list[tuple]:
        shapes = []
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            shapes.append((a, b))
            shapes.append((b,))
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes())


def init_params(spec: MLPSpec, seed: int) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-a, a, size=(fan_in, fan_out)).astype(get_dtype()))
        params.append(np.zeros(fan_out, dtype=get_dtype()))
    return params


def _activate(name: str, x: Tensor) -> Tensor:
    if name == "tanh":
        return x.tanh()
    if name == "softplus":
        return x.softplus()
    if name == "relu":
        return x.relu()
    if name == "sigmoid":
        return x.sigmoid()
    return x


def _activation_slope(name: str, pre: Tensor, post: Tensor) -> Tensor:
    """Derivative of the activation, expressed with primitives so it stays on the tape."""
    if name == "tanh":
        return 1.0 - post.square()
    if name == "softplus":
        return pre.sigmoid()
    if name == "relu":
        return Tensor((pre.data > 0).astype(pre.data.dtype))
    raise ValueError(f"no slope rule for activation {name!r}")


def _check_params(spec: MLPSpec, params: Sequence):
    if len(params) != 2 * spec.n_layers:
        raise ValueError(f"expected {2 * spec.n_layers} parameter tensors, got {len(params)}")


def mlp_forward(spec: MLPSpec, params: Sequence, x) -> Tensor:
    """Apply affine+activation layers; the last layer uses ``spec.output_activation``.

    Weights may carry leading batch axes (one network per batch row); in that
    case biases must be shaped ``(..., 1, out)`` and ``x`` ``(..., n, in)``.
    """
    _check_params(spec, params)
    x = as_tensor(x)
    if x.shape[-1] != spec.n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match first layer width {spec.n_in}")
    h = x
    last = spec.n_layers - 1
    for k in range(spec.n_layers):
        h = h @ params[2 * k] + params[2 * k + 1]
        h = _activate(spec.activation if k < last else spec.output_activation, h)
    return h


def mlp_forward_jvp(spec: MLPSpec, params: Sequence, x, first_tangent: Tensor):
    """Forward pass plus tangents through the network.

    ``first_tangent`` is the tangent of the first pre-activation, shaped
    ``(..., K, width_1)``, i.e. directions already multiplied by the first
    weight matrix. ``x`` must be shaped ``(..., 1, in)`` so the per-layer
    slopes broadcast across the K directions. Returns ``(out, out_tangent)``
    with ``out_tangent`` shaped ``(..., K, out)``. Everything is recorded with
    ordinary primitives, so the tangents are themselves differentiable.
    """
    _check_params(spec, params)
    if spec.output_activation != "none":
        raise ValueError("tangent propagation supports linear output layers only")
    x = as_tensor(x)
    if x.shape[-1] != spec.n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match first layer width {spec.n_in}")
    h = x
    dh = None
    last = spec.n_layers - 1
    for k in range(spec.n_layers):
        W, b = params[2 * k], params[2 * k + 1]
        pre = h @ W + b
        dpre = first_tangent if k == 0 else dh @ W
        if k == last:
            return pre, dpre
        h = _activate(spec.activation, pre)
        dh = _activation_slope(spec.activation, pre, h) * dpre
    raise AssertionError("unreachable")


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params: Sequence[np.ndarray], lr: float = 0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], names=None):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; ``state`` is updated in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(g) != np.shape(p):
            label = names[i] if names else f"#{i}"
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)} for {label}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append((p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False))
    return out, state
