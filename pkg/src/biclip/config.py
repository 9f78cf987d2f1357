"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from biclip.errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    batch_size: int = 8
    epochs: int = 25
    max_steps: int = 0  # 0: run all epochs
    lr_initial: float = 1e-4
    lr_min: float = 1e-6
    t_0: int = 10  # epochs in the first cosine cycle
    t_mult: int = 2
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    # loss weights
    lambda_gen: float = 1.0
    lambda_iac: float = 0.1
    lambda_cycle: float = 0.1
    # data / reproducibility
    seed: int = 0
    data_fraction: float = 1.0
    checkpoint_path: str = ""
    # model
    image_side: int = 64
    d_raw: int = 128
    d_t: int = 64
    d_i: int = 64
    d_p: int = 64
    base_width: int = 16
    depth: int = 3
    pseudo_channels: int = 1

    def __post_init__(self):
        validate(self)

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Batch 16, 150 epochs, lr 1e-4, 224x224 inputs."""
        base = dict(batch_size=16, epochs=150, image_side=224)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value, types[key], f"{source}:{lineno}")
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), source=os.fspath(path))


def _coerce(key: str, value: str, typ: str, where: str):
    try:
        if typ == "int":
            f = float(value)
            if not f.is_integer():
                raise ValueError(value)
            return int(f)
        if typ == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {typ}, got {value!r}") from None


def validate(cfg: TrainConfig) -> None:
    for name in ("lambda_gen", "lambda_iac", "lambda_cycle"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0, got {getattr(cfg, name)}")
    for name in ("batch_size", "epochs", "t_0", "t_mult", "d_raw", "d_t", "d_i", "d_p", "base_width", "depth"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if cfg.max_steps < 0:
        raise ConfigError("max_steps must be >= 0")
    if not (0.0 < cfg.data_fraction <= 1.0):
        raise ConfigError(f"data_fraction must lie in (0, 1], got {cfg.data_fraction}")
    if cfg.lr_initial <= 0 or cfg.lr_min < 0 or cfg.lr_min > cfg.lr_initial:
        raise ConfigError("need 0 <= lr_min <= lr_initial and lr_initial > 0")
    if cfg.image_side % 8 or cfg.image_side % 2**cfg.depth:
        raise ConfigError(f"image_side {cfg.image_side} must be divisible by 8 and 2**depth")
    if cfg.pseudo_channels != 1:
        raise ConfigError("only pseudo_channels = 1 is supported")
