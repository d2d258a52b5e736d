"""Run configuration: flat ``key = value`` files plus CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..model import ModelConfig


@dataclass
class RunConfig:
    dataset: str = ""
    out: str = "run"
    latent_dim: int = 2
    window: int = 3
    dynamics_mode: str = "second"
    weight_mode: str = "bayesian"
    likelihood: str = "auto"
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 8
    refine: int = 5
    gamma_max: float = 1.0
    anneal_epochs: int = 50
    beta: float | None = None
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 20
    precision: str = "float32"
    crop_len: int = 20
    enc_hidden: tuple = (128, 64)
    dec_hidden: tuple = (64, 128)
    dyn_hidden: tuple = (64, 64)
    log_s_init: float = -6.0
    weight_decay: float = 1e-4
    dec_log_var_init: float = -4.0
    trace_method: str = "exact"
    trace_probes: int = 1
    max_exact_trace_dim: int = 16

    def __post_init__(self):
        for name in ("enc_hidden", "dec_hidden", "dyn_hidden"):
            setattr(self, name, _as_tuple(getattr(self, name)))
        if self.window < 1 or self.latent_dim < 1 or self.refine < 1:
            raise ValueError("window, latent_dim and refine must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def model_config(self, frame_dim: int, sensor: bool) -> ModelConfig:
        likelihood = self.likelihood
        if likelihood == "auto":
            likelihood = "gaussian" if sensor else "bernoulli"
        return ModelConfig(
            frame_dim=frame_dim,
            latent_dim=self.latent_dim,
            window=self.window,
            likelihood=likelihood,
            dynamics_mode=self.dynamics_mode,
            weight_mode=self.weight_mode,
            enc_hidden=self.enc_hidden,
            dec_hidden=self.dec_hidden,
            dyn_hidden=self.dyn_hidden,
            log_s_init=self.log_s_init,
            weight_decay=self.weight_decay,
            refine=self.refine,
            trace_method=self.trace_method,
            trace_probes=self.trace_probes,
            max_exact_trace_dim=self.max_exact_trace_dim,
            beta=self.beta,
            gamma_max=self.gamma_max,
            anneal_epochs=self.anneal_epochs,
            dec_log_var_init=self.dec_log_var_init,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _as_tuple(value) -> tuple:
    if isinstance(value, str):
        return tuple(int(x) for x in value.replace(",", " ").split())
    return tuple(int(x) for x in value)


def _coerce(name: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if name not in fields:
        raise KeyError(f"unknown config key {name!r}")
    default = fields[name].default
    raw = raw.strip()
    if name == "beta":
        return None if raw.lower() in ("", "none") else float(raw)
    if name.endswith("_hidden"):
        return _as_tuple(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """``key = value`` per line; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**values)
