"""Layered run configuration: documented defaults < config file < command-line flags.

The config file is flat, one ``section.key = value`` per line, with ``#``
comments.  Sections are ``run``, ``model`` and ``train``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunOptions:
    dataset_dir: str = ""
    output_dir: str = "runs"
    seeds: tuple = ()
    split_seed: int = 0
    variant: str = "Full"
    variants: tuple = ()
    perturb_levels: tuple = (0.0, 0.1, 0.2, 0.3)
    sweep_factor: str = "lambda1"
    sweep_grid: tuple = ()
    ssl_grid_search: bool = False
    split: str = "test"
    remap_ids: bool = False


@dataclass
class RunConfig:
    run: RunOptions = field(default_factory=RunOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def seeds(self) -> list[int]:
        return [int(s) for s in self.run.seeds] or [self.train.seed]

    def as_flat(self) -> dict:
        out = {}
        for section in SECTIONS:
            for key, value in dataclasses.asdict(getattr(self, section)).items():
                out[f"{section}.{key}"] = value
        return out


SECTIONS = {"run": RunOptions, "model": ModelConfig, "train": TrainConfig}


def valid_keys() -> list[str]:
    return [f"{s}.{f.name}" for s, cls in SECTIONS.items() for f in dataclasses.fields(cls)]


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(raw, kind, key: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            items = [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]
            return tuple(_scalar(t) for t in items)
        if typing.get_origin(kind) is typing.Union:
            # "str | None" style fields
            return None if text.lower() == "none" else text
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {getattr(kind, '__name__', kind)}") from None


def _scalar(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def build_config(*layers: dict) -> RunConfig:
    """Merge ``section.key -> value`` layers, later layers overriding earlier ones."""
    merged = {}
    for layer in layers:
        merged.update(layer)
    keys = set(valid_keys())
    unknown = sorted(k for k in merged if k not in keys)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; valid keys: {', '.join(valid_keys())}")
    sections = {}
    for section, cls in SECTIONS.items():
        types = _field_types(cls)
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = f"{section}.{f.name}"
            if key in merged:
                kwargs[f.name] = _coerce(merged[key], types[f.name], key)
        try:
            sections[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {section} settings: {exc}") from None
    return RunConfig(**sections)


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in cfg.as_flat().items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")
