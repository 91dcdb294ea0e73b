"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    model: str = "vdsr_resnext"
    depth_middle: int = 18
    block_width: int = 128
    cardinality: int = 32
    base_channels: int = 64
    with_bias: bool = True
    # start the reconstruction conv at zero so the untrained model is exactly bicubic
    zero_init_output: bool = True
    # optimisation ("adam" ignores momentum, weight_decay and clipping)
    optimizer: str = "sgd"
    epochs: int = 25
    batch_size: int = 128
    lr: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_theta: float = 0.4
    clip_mode: str = "fixed"
    seed: int = 0
    # data and output
    manifest: str = ""
    val_dir: str = ""
    val_scale: int = 2
    out_dir: str = "runs/sr"
    max_patches: int = 0
    max_iters: int = 0
    checkpoint_every: int = 1
    threads: int = 1

    def model_fields(self) -> dict:
        if self.model == "vdsr":
            return {"depth": self.depth_middle, "base_channels": self.base_channels, "kernel": 3, "with_bias": int(self.with_bias)}
        return {
            "depth_middle": self.depth_middle,
            "block_width": self.block_width,
            "cardinality": self.cardinality,
            "base_channels": self.base_channels,
            "kernel": 3,
            "with_bias": int(self.with_bias),
        }

    def to_text(self) -> str:
        lines = [f"{f.name} = {_fmt(getattr(self, f.name))}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``(key, raw_value)`` pairs; unknown keys are an error."""
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    updates = {}
    for key, raw in pairs:
        key = key.strip()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _coerce(key, types[key], raw)
    cfg = dataclasses.replace(cfg, **updates)
    if cfg.model not in ("vdsr_resnext", "vdsr"):
        raise ConfigError(f"unknown model {cfg.model!r}")
    if cfg.clip_mode not in ("fixed", "adjustable", "none"):
        raise ConfigError(f"unknown clip_mode {cfg.clip_mode!r}")
    if cfg.optimizer not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")
    return cfg


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((key, value))
    return apply_overrides(base or RunConfig(), pairs)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)
