"""Model configuration and parameter bookkeeping."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, get_dtype
from .bnn import DEFAULT_LOG_S, BNNPosterior
from .nn import MLPSpec, init_params


@dataclass
class ModelConfig:
    frame_dim: int
    latent_dim: int = 2
    window: int = 3
    likelihood: str = "bernoulli"
    dynamics_mode: str = "second"
    weight_mode: str = "bayesian"
    enc_hidden: tuple = (128, 64)
    dec_hidden: tuple = (64, 128)
    dyn_hidden: tuple = (64, 64)
    dyn_activation: str = "tanh"
    log_s_init: float = DEFAULT_LOG_S
    weight_decay: float = 1e-4
    refine: int = 5
    trace_method: str = "exact"
    trace_probes: int = 1
    max_exact_trace_dim: int = 16
    beta: float | None = None
    gamma_max: float = 1.0
    anneal_epochs: int = 50
    dec_log_var_init: float = 0.0

    def __post_init__(self):
        self.enc_hidden = tuple(self.enc_hidden)
        self.dec_hidden = tuple(self.dec_hidden)
        self.dyn_hidden = tuple(self.dyn_hidden)
        if self.latent_dim < 1 or self.window < 1 or self.refine < 1:
            raise ValueError("latent_dim, window and refine must all be >= 1")
        if self.likelihood not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.dynamics_mode not in ("second", "first"):
            raise ValueError(f"unknown dynamics mode {self.dynamics_mode!r}")
        if self.weight_mode not in ("bayesian", "deterministic"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if self.dyn_activation == "relu":
            raise ValueError("relu is not allowed in the dynamics network")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def position_encoder_spec(cfg: ModelConfig) -> MLPSpec:
    return MLPSpec((cfg.frame_dim, *cfg.enc_hidden, 2 * cfg.latent_dim), "tanh")


def velocity_encoder_spec(cfg: ModelConfig) -> MLPSpec:
    return MLPSpec((cfg.window * cfg.frame_dim, *cfg.enc_hidden, 2 * cfg.latent_dim), "tanh")


def decoder_spec(cfg: ModelConfig) -> MLPSpec:
    out_act = "sigmoid" if cfg.likelihood == "bernoulli" else "none"
    return MLPSpec((cfg.latent_dim, *cfg.dec_hidden, cfg.frame_dim), "tanh", out_act)


def dynamics_spec(cfg: ModelConfig) -> MLPSpec:
    d = cfg.latent_dim
    out = d if cfg.dynamics_mode == "second" else 2 * d
    return MLPSpec((2 * d, *cfg.dyn_hidden, out), cfg.dyn_activation)


def _named(prefix: str, params: list) -> dict:
    out = {}
    for k in range(0, len(params), 2):
        out[f"{prefix}.W{k // 2}"] = params[k]
        out[f"{prefix}.b{k // 2}"] = params[k + 1]
    return out


def init_model(cfg: ModelConfig, seed: int) -> dict:
    """Ordered name -> array mapping of every trainable quantity."""
    ss = np.random.SeedSequence(seed).spawn(4)
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    params: dict = {}
    params.update(_named("pos_enc", init_params(position_encoder_spec(cfg), seeds[0])))
    params.update(_named("vel_enc", init_params(velocity_encoder_spec(cfg), seeds[1])))
    params.update(_named("dec", init_params(decoder_spec(cfg), seeds[2])))
    if cfg.likelihood == "gaussian":
        params["dec.log_var"] = np.array(cfg.dec_log_var_init, dtype=get_dtype())
    dyn = init_params(dynamics_spec(cfg), seeds[3])
    params["bnn.m"] = np.concatenate([p.reshape(-1) for p in dyn]).astype(get_dtype())
    if cfg.weight_mode == "bayesian":
        params["bnn.log_s"] = np.array(cfg.log_s_init, dtype=get_dtype())
    return params


def parameter_groups(params: dict) -> dict:
    groups: dict = {}
    for name in params:
        groups.setdefault(name.split(".")[0], []).append(name)
    return groups


@dataclass
class BoundModel:
    """Parameters wrapped as Tensors (tape leaves when training) plus the specs."""

    cfg: ModelConfig
    tensors: dict
    pos_spec: MLPSpec
    vel_spec: MLPSpec
    dec_spec: MLPSpec
    posterior: BNNPosterior

    def _list(self, prefix, spec):
        return [self.tensors[f"{prefix}.{kind}{k}"] for k in range(spec.n_layers) for kind in ("W", "b")]

    @property
    def pos_params(self):
        return self._list("pos_enc", self.pos_spec)

    @property
    def vel_params(self):
        return self._list("vel_enc", self.vel_spec)

    @property
    def dec_params(self):
        return self._list("dec", self.dec_spec)

    @property
    def dec_log_var(self):
        return self.tensors.get("dec.log_var")


def bind(cfg: ModelConfig, params: dict, tape: Tape | None = None, replace: dict | None = None) -> BoundModel:
    """Wrap ``params`` as Tensors; ``replace`` swaps in caller-owned Tensors by name."""
    if tape is None:
        tensors = {k: Tensor(np.asarray(v, dtype=get_dtype())) for k, v in params.items()}
    else:
        tensors = {k: tape.variable(v) for k, v in params.items()}
    for name, t in (replace or {}).items():
        if name not in tensors:
            raise KeyError(f"unknown parameter {name!r}")
        tensors[name] = t
    deterministic = cfg.weight_mode == "deterministic"
    log_s = tensors.get("bnn.log_s", Tensor(-np.inf))
    posterior = BNNPosterior(
        m=tensors["bnn.m"], log_s=log_s, spec=dynamics_spec(cfg),
        deterministic=deterministic, weight_decay=cfg.weight_decay,
    )
    return BoundModel(cfg, tensors, position_encoder_spec(cfg), velocity_encoder_spec(cfg), decoder_spec(cfg), posterior)

