"""Run configuration: per-module dataclasses, dataset presets, key-value config files."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .environment import EnvConfig
from .policy import PolicyConfig
from .reward import ConvEConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    epochs: int = 20
    beam_width: int = 256
    dev_beam_width: int = 32
    seed: int = 0
    use_reward_shaping: bool = True
    precision: str = "float32"
    eval_batch_size: int = 16
    eval_inverse_queries: bool = False
    workers: int = 1
    pagerank_damping: float = 0.85
    pagerank_iterations: int = 50
    unseen_fraction: float = 0.10
    dev_fraction: float = 0.05

    def __post_init__(self):
        for name in ("batch_size", "epochs", "beam_width", "dev_beam_width", "eval_batch_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")


# neighbor-mask fraction and beam width per benchmark
DATASET_PRESETS = {
    "fb15k-237": {"mask_fraction": 0.5, "beam_width": 256},
    "wn18rr": {"mask_fraction": 0.5, "beam_width": 256},
    "nell-995": {"mask_fraction": 0.3, "beam_width": 512},
}


@dataclass
class RunConfig:
    dataset: str | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    conve: ConvEConfig = field(default_factory=ConvEConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def for_dataset(cls, name: str | None) -> "RunConfig":
        cfg = cls(dataset=name)
        if name is not None:
            key = name.lower().replace("_", "-").removesuffix("-inductive")
            if key not in DATASET_PRESETS:
                raise ConfigError(f"unknown dataset preset {name!r}")
            preset = DATASET_PRESETS[key]
            cfg.encoder.mask_fraction = preset["mask_fraction"]
            cfg.train.beam_width = preset["beam_width"]
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            return cls(
                dataset=data.get("dataset"),
                encoder=EncoderConfig(**data.get("encoder", {})),
                env=EnvConfig(**data.get("env", {})),
                policy=PolicyConfig(**data.get("policy", {})),
                conve=ConvEConfig(**data.get("conve", {})),
                train=TrainConfig(**data.get("train", {})),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


_SECTIONS = {"encoder": EncoderConfig, "env": EnvConfig, "policy": PolicyConfig,
             "conve": ConvEConfig, "train": TrainConfig}


def _coerce(text: str, kind):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    origin = str(kind)
    if "bool" in origin:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if "tuple" in origin:
        return tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())
    if "int" in origin and "float" not in origin:
        return int(text)
    if "float" in origin:
        return float(text)
    return text


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read an INI-style key = value file with [encoder]/[env]/[policy]/[conve]/[train] sections.

    Keys before any section header belong to ``[run]`` (currently only ``dataset``).
    """
    parser = configparser.ConfigParser()
    text = Path(path).read_text(encoding="utf-8") if path is not None else ""
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig.for_dataset(parser.get("run", "dataset", fallback=None))
    for section in parser.sections():
        if section == "run":
            unknown = set(parser["run"]) - {"dataset"}
            if unknown:
                raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        for key, raw in parser[section].items():
            if key not in types:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                setattr(target, key, _coerce(raw, types[key]))
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        setattr(getattr(cfg, section), key, value)
    # re-run validation after field assignment
    return RunConfig.from_dict(cfg.to_dict())
