"""Flat ``key = value`` run configuration with fail-fast validation."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from ..classifier import BackboneConfig
from ..errors import ConfigError
from ..glsa import GLSAConfig
from ..grid import GridSpec


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


@dataclass
class RunConfig:
    N: int = 4
    S_n: int = 6
    S_w: int = 0  # 0 -> image_size // N
    S_h: int = 0
    tau: float = 0.5
    proximity: int = 4
    heads: int = 4
    head_dim: int = 8
    embed_dim: int = 32
    conv_depth: int = 2
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 12
    batch_size: int = 16
    seed: int = 0
    image_size: int = 64
    xo_mode: str = "argmax"
    grouping: str = "row-major"
    local_aggregation: str = "share-and-mean"
    target_norm: str = "max"
    lr_schedule: str = "cosine"
    glsa_lr: float = 0.05
    glsa_epochs: int = 15
    widths: tuple = (16, 32, 64)
    class_counts: tuple = (200, 200, 20, 200, 200, 20)
    test_counts: tuple = (100, 100, 100, 100, 100, 100)

    def __post_init__(self):
        if not self.S_w:
            self.S_w = self.image_size // self.N if self.N else 0
        if not self.S_h:
            self.S_h = self.image_size // self.N if self.N else 0

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    @property
    def input_shape(self) -> tuple:
        return (3, self.image_size, self.image_size)

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.N, self.S_n, self.S_w, self.S_h, self.tau)

    def glsa_config(self) -> GLSAConfig:
        return GLSAConfig(N=self.N, embed_dim=self.embed_dim, proximity=self.proximity, heads=self.heads,
                          head_dim=self.head_dim, conv_depth=self.conv_depth, grouping=self.grouping)

    def backbone_config(self) -> BackboneConfig:
        n = len(self.widths)
        return BackboneConfig(widths=tuple(self.widths), blocks=(1,) * n, strides=(1,) + (2,) * (n - 1))

    def validate(self) -> "RunConfig":
        """Check every cross-field invariant; raises ConfigError naming the first violation."""
        if self.image_size < 1:
            raise ConfigError("image_size must be positive")
        if self.N < 1 or self.image_size % self.N:
            raise ConfigError(f"N={self.N} must divide image_size={self.image_size}")
        if self.image_size // self.N < 3:
            raise ConfigError(f"grid cells of {self.image_size // self.N} px are smaller than the 3x3 kernel")
        self.grid_spec().validate(self.image_size, self.image_size)
        self.glsa_config().validate()
        if self.xo_mode not in ("argmax", "mean-positive"):
            raise ConfigError(f"xo_mode must be argmax or mean-positive, got {self.xo_mode!r}")
        if self.local_aggregation not in ("share-and-mean", "stack-channels"):
            raise ConfigError(f"local_aggregation must be share-and-mean or stack-channels, got {self.local_aggregation!r}")
        if self.target_norm not in ("max", "none"):
            raise ConfigError(f"target_norm must be max or none, got {self.target_norm!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be cosine or constant, got {self.lr_schedule!r}")
        if self.lr < 0 or self.glsa_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 0 or self.glsa_epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError("widths must be positive integers")
        if len(self.class_counts) < 2 or min(self.class_counts) < 1:
            raise ConfigError("class_counts needs at least two positive entries")
        if len(self.test_counts) != len(self.class_counts) or min(self.test_counts) < 0:
            raise ConfigError("test_counts must have one non-negative entry per class")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw: str, lineno: int):
    default = _FIELDS[name].default
    if default is dataclasses.MISSING:
        default = _FIELDS[name].default_factory()
    try:
        if isinstance(default, tuple):
            return _ints(raw)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {name}") from None
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, lineno)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()


def load_config(path=None, **overrides) -> RunConfig:
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return parse_config(text, **overrides)
