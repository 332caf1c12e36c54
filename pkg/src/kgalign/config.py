"""Hyperparameters and flat ``key=value`` config handling.

Defaults reproduce the published experimental settings wherever those exist.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    dim: int = 300
    layers: int = 2
    highway_all_layers: bool = True
    gate_bias_init: float = -1.0

    def validate(self):
        if self.dim < 1 or self.layers < 1:
            raise ConfigError("encoder dim and layers must be >= 1")


@dataclass
class TrainConfig:
    margin: float = 1.0
    reg_weight: float = 0.001
    lr: float = 0.001
    negatives: int = 125
    pretrain_epochs: int = 50
    joint_epochs: int = 10
    resample_every: int = 10
    neg_pool: int = 100
    corrupt_both: bool = True
    train_features: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.reg_weight < 0:
            raise ConfigError("reg_weight must be >= 0")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if self.pretrain_epochs < 0 or self.joint_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.resample_every < 1 or self.neg_pool < 1:
            raise ConfigError("resample_every and neg_pool must be >= 1")


@dataclass
class MatchConfig:
    entity_weight: float = 10.0
    relation_weight: float = 200.0
    entity_candidates: int = 100
    relation_candidates: int = 20
    use_probability: bool = True
    use_relations: bool = True

    def validate(self):
        if self.entity_weight < 0 or self.relation_weight < 0:
            raise ConfigError("matching weights must be >= 0")
        if self.entity_candidates < 1 or self.relation_candidates < 1:
            raise ConfigError("candidate counts must be >= 1")


@dataclass
class IterConfig:
    entity_threshold: float = 5.0
    relation_threshold: float = 3.0
    max_iters: int = 4
    stop_on_fixed_point: bool = True

    def validate(self):
        if self.entity_threshold <= 0 or self.relation_threshold <= 0:
            raise ConfigError("thresholds must be > 0")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


VARIANTS = ("full", "-AP", "-IS", "-RM")


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    iterate: IterConfig = field(default_factory=IterConfig)
    seed: int = 0
    seed_ratio: float = 0.3
    feature_fill: str = "zeros"
    variant: str = "full"
    fold_reverse: bool = True
    ks: tuple[int, ...] = (1, 10)
    threads: int = 1

    def validate(self):
        for sub in (self.encoder, self.train, self.match, self.iterate):
            sub.validate()
        if not 0 < self.seed_ratio < 1:
            raise ConfigError("seed_ratio must lie in (0, 1)")
        if self.feature_fill not in ("zeros", "normal"):
            raise ConfigError("feature_fill must be 'zeros' or 'normal'")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be a non-empty list of positive ints")
        return self

    # flat key access -------------------------------------------------------

    _SECTIONS = ("encoder", "train", "match", "iterate")

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sf in fields(value):
                    out[sf.name] = getattr(value, sf.name)
            else:
                out[f.name] = value
        return out

    def with_updates(self, updates: dict[str, Any]) -> RunConfig:
        """Return a copy with flat keys overridden; unknown keys raise."""
        cfg = dataclasses.replace(
            self, **{s: dataclasses.replace(getattr(self, s)) for s in self._SECTIONS}
        )
        owners = _key_owners(cfg)
        for key, raw in updates.items():
            if key not in owners:
                raise ConfigError(f"unknown config key {key!r}")
            target, ftype = owners[key]
            setattr(target, key, _coerce(raw, ftype, key))
        return cfg.validate()


def _key_owners(cfg: RunConfig) -> dict[str, tuple[Any, Any]]:
    owners = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sf in fields(value):
                owners[sf.name] = (value, sf.type)
        else:
            owners[f.name] = (cfg, f.type)
    return owners


def _coerce(raw: Any, ftype: Any, key: str) -> Any:
    ftype = str(ftype)
    if not isinstance(raw, str):
        if ftype.startswith("tuple"):
            return tuple(int(v) for v in raw)
        return raw
    text = raw.strip()
    try:
        if ftype == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ftype == "int":
            return int(text)
        if ftype == "float":
            return float(text)
        if ftype.startswith("tuple"):
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_kv_text(path.read_text(encoding="utf-8"), str(path))


def format_kv(values: dict[str, Any]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
