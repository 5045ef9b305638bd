"""Run configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from attngen.analysis import DEFAULT_SCHEDULE
from attngen.dataio import SyntheticSpec
from attngen.errors import ConfigError
from attngen.model import AttnGenConfig
from attngen.trainer import TrainConfig

ALIASES = {"lambda": "kl_weight"}
TUPLE_TYPES = {"channels": int, "schedule": int, "alphas": float}


@dataclass
class RunConfig:
    # data and outputs
    corpus: str = ""
    checkpoint: str = ""
    out_dir: str = "out"
    train_fraction: float = 0.9
    # model
    length: int = 200
    vocab: int = 5
    embed_dim: int = 128
    kernel_size: int = 8
    channels: tuple = (32, 16, 4)
    pool_width: int = 2
    pool_stride: int = 2
    dropout_p: float = 0.3
    fc_hidden: int = 64
    classes: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    # training
    lr: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 1e-4
    kl_weight: float = 0.1
    alpha: float = 0.1
    max_epochs: int = 50
    patience: int = 10
    clip_norm: float = 1.0
    seed: int = 42
    precision: str = "float32"
    mask_mode: str = "attention"
    log_wall_time: bool = False
    # analysis
    eval_count: int = 3000
    order: str = "high"
    schedule: tuple = DEFAULT_SCHEDULE
    alphas: tuple = (0.0, 0.1, 0.2, 0.5)
    viz_count: int = 16
    # synthetic corpus
    synth_count: int = 2000
    synth_seed: int = 42
    motif_class0: str = SyntheticSpec.motif_class0
    motif_class1: str = SyntheticSpec.motif_class1
    plant_probability: float = 1.0
    position_mode: str = "uniform"
    fixed_position: int = 0

    def model_config(self) -> AttnGenConfig:
        return _subset(AttnGenConfig, self).validate()

    def train_config(self) -> TrainConfig:
        return _subset(TrainConfig, self).resolved()

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(count=self.synth_count, length=self.length,
                             motif_class0=self.motif_class0, motif_class1=self.motif_class1,
                             plant_probability=self.plant_probability,
                             position_mode=self.position_mode,
                             fixed_position=self.fixed_position, seed=self.synth_seed)

    def validate(self):
        self.model_config()
        self.train_config()
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.order not in ("high", "low", "random"):
            raise ConfigError(f"order must be high, low or random, got {self.order!r}")
        if self.eval_count < 1 or self.viz_count < 1:
            raise ConfigError("eval_count and viz_count must be positive")
        return self

    def render(self) -> str:
        """The resolved snapshot, one ``key = value`` line per field."""
        return "".join(f"{f.name} = {format_field(getattr(self, f.name))}\n" for f in fields(self))


def _subset(cls, run: RunConfig):
    return cls(**{f.name: getattr(run, f.name) for f in fields(cls)})


def field_names():
    return [f.name for f in fields(RunConfig)]


def format_field(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_field(v) for v in value)
    return str(value)


def parse_field(name: str, text: str):
    """Convert ``text`` to the type of RunConfig field ``name``."""
    name = ALIASES.get(name, name)
    defaults = {f.name: f.default for f in fields(RunConfig)}
    if name not in defaults:
        raise ConfigError(f"unknown config key {name!r}")
    like = defaults[name]
    text = text.strip()
    try:
        if isinstance(like, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return lowered in ("true", "1", "yes")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            kind = TUPLE_TYPES[name]
            return tuple(kind(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        canonical = ALIASES.get(key, key)
        values[canonical] = parse_field(canonical, value)
    return values


def load_run_config(path=None, overrides=None) -> RunConfig:
    """File values first, then ``overrides`` (already typed or raw strings)."""
    values = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        values.update(parse_config_text(text))
    for key, value in (overrides or {}).items():
        key = ALIASES.get(key, key)
        values[key] = parse_field(key, value) if isinstance(value, str) else value
    unknown = set(values) - set(field_names())
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    return dataclasses.replace(RunConfig(), **values).validate()
