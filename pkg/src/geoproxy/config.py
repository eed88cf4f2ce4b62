"""Experiment configuration: flat key=value text with section headers
(INI via configparser), a dataclass mirror, and a stable content hash."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .optim import config_hash as _hash_text


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    # [experiment]
    regime: str = "trained-le-pcl"
    seed: int = 0
    output_dir: str = ""

    # [data]
    points: str = ""
    field_spec: str = ""
    frozen_table: str = ""

    # [encoder]
    obs_embed_dim: int = 32                   # d1
    obs_widths: tuple = (64, 64)
    loc_embed_dim: int = 64                   # d2
    rff_per_level: int = 32                   # frequencies per scale level
    rff_sigmas: tuple = (1.0, 4.0, 16.0, 64.0)
    trunk_widths: tuple = (128, 128)
    temporal: str = "day-of-year"             # day-of-year | year | none
    time_per_level: int = 8
    time_sigma: float = 1.0
    head_widths: tuple = (64, 64)

    # [loss]
    proxy_weight: float = 0.2                 # lambda
    channel_weights: tuple = (1.0,)           # diagonal weights, length m

    # [sampler]
    batch_size: int = 256
    rho: float = 16.0
    sampler_mode: str = "random-only"

    # [split]
    split_protocol: str = "uar"               # uar | checkerboard
    split_fraction: float = 0.5
    split_delta: float = 5.0
    split_offset: str = "original"
    split_swap: bool = False
    val_share: float = 0.1

    # [optimizer]
    learning_rate: float = 3e-4
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    epochs: int = 100
    pretrain_epochs: int = 50
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    stop_patience: int = 15

    def validate(self) -> None:
        from .model import REGIMES
        from .splits import OFFSET_VARIANTS

        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.split_protocol not in ("uar", "checkerboard"):
            raise ConfigError(f"split_protocol must be uar or checkerboard, got {self.split_protocol!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.split_delta <= 0.0:
            raise ConfigError(f"split_delta must be positive, got {self.split_delta}")
        if self.split_offset not in OFFSET_VARIANTS:
            raise ConfigError(f"split_offset must be one of {OFFSET_VARIANTS}, got {self.split_offset!r}")
        if self.rho < 0.0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if self.proxy_weight < 0.0:
            raise ConfigError(f"proxy_weight must be >= 0, got {self.proxy_weight}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.sampler_mode not in ("random-only", "sites-only", "sites+random"):
            raise ConfigError(f"unknown sampler_mode {self.sampler_mode!r}")
        if self.temporal not in ("day-of-year", "year", "none"):
            raise ConfigError(f"unknown temporal encoder kind {self.temporal!r}")
        if self.regime == "frozen-le" and not self.frozen_table:
            raise ConfigError("frozen-le regime requires data.frozen_table")


_SECTIONS = {
    "experiment": ("regime", "seed", "output_dir"),
    "data": ("points", "field_spec", "frozen_table"),
    "encoder": ("obs_embed_dim", "obs_widths", "loc_embed_dim", "rff_per_level",
                "rff_sigmas", "trunk_widths", "temporal", "time_per_level",
                "time_sigma", "head_widths"),
    "loss": ("proxy_weight", "channel_weights"),
    "sampler": ("batch_size", "rho", "sampler_mode"),
    "split": ("split_protocol", "split_fraction", "split_delta", "split_offset",
              "split_swap", "val_share"),
    "optimizer": ("learning_rate", "clip_norm", "weight_decay", "epochs",
                  "pretrain_epochs", "plateau_factor", "plateau_patience",
                  "plateau_min_delta", "stop_patience"),
}

_TUPLE_FIELDS = {"obs_widths", "trunk_widths", "head_widths"}
_FLOAT_TUPLE_FIELDS = {"rff_sigmas", "channel_weights"}


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    for section, keys in _SECTIONS.items():
        buf.write(f"[{section}]\n")
        for key in keys:
            buf.write(f"{key} = {_format_value(getattr(cfg, key))}\n")
        buf.write("\n")
    return buf.getvalue()


def config_from_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    defaults = ExperimentConfig()
    kwargs = {}
    known = {key: section for section, keys in _SECTIONS.items() for key in keys}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in known or known[key] != section:
                raise ConfigError(f"unknown config key '{key}' in section [{section}]")
            default = getattr(defaults, key)
            try:
                if key in _TUPLE_FIELDS:
                    kwargs[key] = tuple(int(v) for v in raw.split(",") if v.strip()) if raw.strip() else ()
                elif key in _FLOAT_TUPLE_FIELDS:
                    kwargs[key] = tuple(float(v) for v in raw.split(",") if v.strip())
                elif isinstance(default, bool):
                    kwargs[key] = raw.strip().lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    kwargs[key] = int(raw)
                elif isinstance(default, float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"config key '{key}': {exc}") from exc
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_text(fh.read())


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return _hash_text(config_to_text(cfg))


def replace(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return dataclasses.replace(cfg, **kwargs)
