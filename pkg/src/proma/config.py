"""Run configuration: a flat TOML table with typed, defaulted fields."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError

RUN_STRATEGIES = ("plain", "ppo_clip", "proma_exact", "proma_approx", "proma_intra")

# fields that must agree between runs for a comparison to be meaningful
TASK_KEYS = ("n_digits", "vocab", "response_len", "n_val", "n_eval_prompts")
MODEL_KEYS = ("d_emb", "d_hid", "init_embed_scale")

_CHOICES = {
    "strategy": RUN_STRATEGIES,
    "optimizer": ("sgd", "adam"),
    "clamp_scope": ("layer", "global"),
    "intra_variant": ("subtract_sandwich", "double_sandwich"),
    "advantage_norm": ("std", "none"),
    "lagged_mode": ("param_mean", "fixed_lag"),
}
_COUNTS = ("n_digits", "response_len", "group_size", "prompts_per_microbatch",
           "microbatches_per_step", "passes", "intra_r", "eval_every", "lag_window",
           "n_val", "n_eval_prompts", "d_emb", "d_hid")


@dataclass(frozen=True)
class RunConfig:
    strategy: str = "plain"
    # task
    n_digits: int = 1
    vocab: int = 16
    response_len: int = 1
    n_val: int = 200
    n_eval_prompts: int = 64
    # model
    d_emb: int = 32
    d_hid: int = 64
    init_embed_scale: float = 1.0
    # rollout and batch geometry
    group_size: int = 8
    prompts_per_microbatch: int = 8
    microbatches_per_step: int = 4
    temperature: float = 1.0
    advantage_norm: str = "std"
    advantage_eps: float = 1e-6
    # optimisation
    total_steps: int = 340
    lr: float = 0.02
    optimizer: str = "sgd"
    # accumulation strategies
    clamp_fraction: float = 0.5
    clamp_scope: str = "layer"
    projection_group_size: int = 8
    passes: int = 2
    clip_eps: float = 0.2
    intra_r: int = 100
    intra_shrinkage: float = 1.0
    intra_power_iters: int = 1
    intra_variant: str = "subtract_sandwich"
    # diagnostics
    eval_every: int = 10
    lag_window: int = 80
    lagged_mode: str = "param_mean"
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError(f"{f.name} must be an integer, got {v!r}")
            if f.type == "float":
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{f.name} must be a number, got {v!r}")
                object.__setattr__(self, f.name, float(v))
            if f.type == "str" and not isinstance(v, str):
                raise ConfigError(f"{f.name} must be a string, got {v!r}")
        for name, allowed in _CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        for name in _COUNTS:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.vocab < 11:
            raise ConfigError("vocab must hold the ten digits plus BOS (>= 11)")
        if self.projection_group_size < 0 or self.intra_power_iters < 0:
            raise ConfigError("projection_group_size and intra_power_iters must be >= 0")
        if not self.clamp_fraction >= 0 or not self.temperature >= 0:
            raise ConfigError("clamp_fraction and temperature must be >= 0")
        for name in ("lr", "clip_eps", "intra_shrinkage", "advantage_eps", "init_embed_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:        # pragma: no cover - guarded above
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def loads_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{source}: config is a flat table; unexpected sections {nested}")
    return RunConfig.from_dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return loads_config(text, str(path))


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
