"""Fixed-step RK4 for the latent flow with a running log-density.

Second-order mode integrates ``s' = v, v' = f_W(s, v)`` and
``d logq / dt = -Tr(df/dv)``. First-order mode treats ``z = (s, v)`` as one
state with ``z' = f_W(z)`` and ``d logq / dt = -Tr(df/dz)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, get_dtype
from .bnn import WeightSample, bnn_forward_tangent

MODES = ("second", "first")
MAX_EXACT_TRACE_DIM = 16


class SolverDivergence(FloatingPointError):
    def __init__(self, step: int, norm: float):
        self.step = step
        self.norm = norm
        super().__init__(f"non-finite state at solver step {step} (state norm {norm})")


@dataclass
class AugmentedState:
    s: Tensor
    v: Tensor
    logq: Tensor
    t: float

    def __post_init__(self):
        self.s, self.v, self.logq = as_tensor(self.s), as_tensor(self.v), as_tensor(self.logq)
        if self.s.shape != self.v.shape:
            raise ValueError(f"position {self.s.shape} and velocity {self.v.shape} differ")
        if self.logq.shape != self.s.shape[:1]:
            raise ValueError(f"logq shape {self.logq.shape} does not match batch {self.s.shape[:1]}")


@dataclass
class TimeGrid:
    times: np.ndarray
    r: int = 5

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.r < 1:
            raise ValueError("refinement factor must be >= 1")
        if self.times.ndim != 1 or self.times.size < 1:
            raise ValueError("times must be a non-empty 1-D array")
        steps = np.diff(self.times)
        if steps.size and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("observation times must be strictly monotone")


@dataclass
class TraceOptions:
    """How the divergence term is computed during a solve."""

    method: str = "exact"
    probes: int = 1
    seed: int = 0
    max_exact_dim: int = MAX_EXACT_TRACE_DIM


def _block(mode: str, d: int):
    if mode == "second":
        return d, d
    if mode == "first":
        return 0, 2 * d
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@functools.lru_cache(maxsize=None)
def _eye(k: int, dtype) -> np.ndarray:
    eye = np.eye(k, dtype=dtype)
    eye.flags.writeable = False
    return eye


def _diag_sum(tangent: Tensor) -> Tensor:
    return (tangent * _eye(tangent.shape[-1], np.dtype(get_dtype()))).sum(axis=(-2, -1))


def exact_trace(sample: WeightSample, s, v, mode: str = "second", max_dim: int = MAX_EXACT_TRACE_DIM) -> Tensor:
    """Exact Jacobian trace (velocity block in second-order mode), one tangent per coordinate."""
    s, v = as_tensor(s), as_tensor(v)
    start, width = _block(mode, s.shape[-1])
    if width > max_dim:
        raise ValueError(
            f"exact trace over {width} dimensions exceeds the cap of {max_dim}; use hutchinson_trace"
        )
    _, tangent = bnn_forward_tangent(sample, s, v, start, width)
    return _diag_sum(tangent)


def rademacher(shape, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (2.0 * rng.integers(0, 2, size=shape) - 1.0).astype(get_dtype())


def hutchinson_trace(sample: WeightSample, s, v, probes: int, seed, mode: str = "second") -> Tensor:
    """Unbiased trace estimate ``mean_k eps_k^T J eps_k`` with Rademacher probes."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    s, v = as_tensor(s), as_tensor(v)
    start, width = _block(mode, s.shape[-1])
    eps = rademacher((s.shape[0], probes, width), seed)
    _, tangent = bnn_forward_tangent(sample, s, v, start, width, directions=eps)
    return (tangent * eps).sum(axis=-1).mean(axis=-1)


def augmented_dynamics(sample: WeightSample, state: AugmentedState, mode: str = "second", trace: TraceOptions | None = None):
    """Time derivative ``(ds, dv, dlogq)`` of the augmented state."""
    trace = trace or TraceOptions()
    s, v = state.s, state.v
    d = s.shape[-1]
    start, width = _block(mode, d)
    if trace.method == "exact":
        if width > trace.max_exact_dim:
            raise ValueError(
                f"exact trace over {width} dimensions exceeds the cap of {trace.max_exact_dim}; "
                "use the hutchinson estimator"
            )
        f, tangent = bnn_forward_tangent(sample, s, v, start, width)
        tr = _diag_sum(tangent)
    elif trace.method == "hutchinson":
        if trace.probes < 1:
            raise ValueError("probes must be >= 1")
        eps = rademacher((s.shape[0], trace.probes, width), trace.seed)
        f, tangent = bnn_forward_tangent(sample, s, v, start, width, directions=eps)
        tr = (tangent * eps).sum(axis=-1).mean(axis=-1)
    else:
        raise ValueError(f"unknown trace method {trace.method!r}")
    if mode == "second":
        return v, f, -tr
    return f[:, :d], f[:, d:], -tr


def _advance(state, k, h):
    return state.s + h * k[0], state.v + h * k[1], state.logq + h * k[2]


def rk4_solve(
    sample: WeightSample,
    init: AugmentedState,
    grid: TimeGrid,
    mode: str = "second",
    trace: TraceOptions | None = None,
) -> list[AugmentedState]:
    """Classical RK4 with ``r`` substeps per observation interval.

    Returns the states at ``grid.times[1:]``; differentiable by unrolling.
    """
    _block(mode, init.s.shape[-1])
    if abs(init.t - grid.times[0]) > 1e-12 * max(1.0, abs(grid.times[0])):
        raise ValueError(f"initial state time {init.t} != first grid time {grid.times[0]}")
    out = []
    state = init
    step = 0
    for t0, t1 in zip(grid.times[:-1], grid.times[1:]):
        h = (t1 - t0) / grid.r
        for j in range(grid.r):
            k1 = augmented_dynamics(sample, state, mode, trace)
            k2 = augmented_dynamics(sample, AugmentedState(*_advance(state, k1, 0.5 * h), state.t + 0.5 * h), mode, trace)
            k3 = augmented_dynamics(sample, AugmentedState(*_advance(state, k2, 0.5 * h), state.t + 0.5 * h), mode, trace)
            k4 = augmented_dynamics(sample, AugmentedState(*_advance(state, k3, h), state.t + h), mode, trace)
            w = h / 6.0
            new = [
                x + w * (a + 2.0 * b + 2.0 * c + e)
                for x, a, b, c, e in zip((state.s, state.v, state.logq), k1, k2, k3, k4)
            ]
            t_next = t1 if j == grid.r - 1 else t0 + (j + 1) * h
            state = AugmentedState(new[0], new[1], new[2], t_next)
            step += 1
            if not (np.all(np.isfinite(state.s.data)) and np.all(np.isfinite(state.v.data))
                    and np.all(np.isfinite(state.logq.data))):
                norm = float(np.sqrt(np.nansum(state.s.data**2) + np.nansum(state.v.data**2)))
                raise SolverDivergence(step, norm)
        out.append(state)
    return out
