"""Experiment configuration files.

The format is INI-style ``key = value`` lines grouped in sections::

    [experiment]
    arch = resnet              ; unet | resnet
    regularization = none      ; none | bn | do | da
    seed = 0
    output_dir = runs/baseline

    [data]
    manifest = data/manifest.tsv
    validation_start_s = 8
    validation_length_s = 8

    [train]
    batch_size = 8
    lr0 = 5e-4
    record_interval = 2500
    plateau_patience = 5
    max_iterations = 5000

    [resnet]
    num_blocks = 8
    channels = 32
    kernel_size = 7
    residual_scale = 0.1

    [unet]
    num_scales = 4
    channels_per_scale = 16, 32, 64, 128
    kernel_sizes = 9, 9, 9, 9

Relative paths resolve against the config file's directory. Errors name
the section, key and line.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .models import ConfigError, ResNetConfig, UNetConfig
from .training import Regularization, TrainConfig, regularized_config

ARCHS = ("unet", "resnet")


class ConfigFileError(ConfigError):
    def __init__(self, message, section=None, key=None, line=None, path=None):
        where = ""
        if section:
            where = f"[{section}]" + (f" {key}" if key else "")
        if line:
            where += f" (line {line})"
        if path:
            where = f"{path}: {where}"
        super().__init__(f"{where}: {message}" if where else message)
        self.section, self.key, self.line = section, key, line


@dataclass
class ExperimentConfig:
    arch: str = "resnet"
    regularization: Regularization = Regularization.NONE
    seed: int = 0
    output_dir: Path = Path("runs")
    manifest: Path | None = None
    validation_start_s: float = 8.0
    validation_length_s: float = 8.0
    unet: UNetConfig = field(default_factory=UNetConfig)
    resnet: ResNetConfig = field(default_factory=ResNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def arch_config(self):
        base = self.unet if self.arch == "unet" else self.resnet
        return regularized_config(base, self.regularization)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "regularization": self.regularization.value,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "manifest": None if self.manifest is None else str(self.manifest),
            "validation_start_s": self.validation_start_s,
            "validation_length_s": self.validation_length_s,
            "arch_config": asdict(self.arch_config),
            "train": self.train.to_dict(),
        }


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and ("=" in line or ":" in line) and not line.startswith((";", "#")):
            key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            where[(section, key)] = n
    return where


def _int_list(text):
    return [int(v) for v in text.replace(",", " ").split()]


_CASTS = {int: int, float: float, str: str, list: _int_list}


def _convert(parser, section, key, kind):
    if kind is bool:
        return parser.getboolean(section, key)
    return _CASTS[kind](parser.get(section, key))


_SCHEMA = {
    "experiment": {"arch": str, "regularization": str, "seed": int, "output_dir": str},
    "data": {"manifest": str, "validation_start_s": float, "validation_length_s": float},
    "train": {"batch_size": int, "lr0": float, "beta1": float, "beta2": float, "adam_eps": float,
              "record_interval": int, "plateau_patience": int, "max_iterations": int,
              "chunk_len": int},
    "resnet": {"num_blocks": int, "channels": int, "kernel_size": int, "residual_scale": float,
               "dropout_p": float},
    "unet": {"num_scales": int, "channels_per_scale": list, "kernel_sizes": list, "dropout_p": float},
}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigFileError(str(exc).replace("\n", " "), path=path) from None
    lines = _line_numbers(text)
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigFileError("unknown section", section, path=path)
        values[section] = {}
        for key in parser.options(section):
            kind = _SCHEMA[section].get(key)
            if kind is None:
                raise ConfigFileError("unknown key", section, key, lines.get((section, key)), path)
            try:
                values[section][key] = _convert(parser, section, key, kind)
            except ValueError as exc:
                raise ConfigFileError(f"invalid value: {exc}", section, key,
                                      lines.get((section, key)), path) from None
    return build_config(values, base_dir=path.parent, lines=lines, path=path)


def build_config(values: dict, base_dir=Path("."), lines=None, path=None) -> ExperimentConfig:
    """Assemble and validate an :class:`ExperimentConfig` from section dictionaries."""
    lines = lines or {}

    def fail(section, key, message):
        raise ConfigFileError(message, section, key, lines.get((section, key)), path)

    exp = values.get("experiment", {})
    data = values.get("data", {})
    cfg = ExperimentConfig()
    arch = str(exp.get("arch", cfg.arch)).lower()
    if arch not in ARCHS:
        fail("experiment", "arch", f"must be one of {', '.join(ARCHS)}, got {arch!r}")
    cfg.arch = arch
    try:
        cfg.regularization = Regularization.parse(exp.get("regularization", "none"))
    except ValueError as exc:
        fail("experiment", "regularization", str(exc))
    cfg.seed = int(exp.get("seed", cfg.seed))
    if "output_dir" in exp:
        cfg.output_dir = _resolve(exp["output_dir"], base_dir)
    if "manifest" in data:
        cfg.manifest = _resolve(data["manifest"], base_dir)
    cfg.validation_start_s = data.get("validation_start_s", cfg.validation_start_s)
    cfg.validation_length_s = data.get("validation_length_s", cfg.validation_length_s)

    for section, cls in (("resnet", ResNetConfig), ("unet", UNetConfig)):
        given = values.get(section, {})
        merged = {**asdict(cls()), **given}
        if section == "unet" and "num_scales" in given and "channels_per_scale" not in given:
            fail("unet", "channels_per_scale", "required when num_scales is set")
        obj = cls(**merged)
        try:
            obj.validate()
        except ConfigError as exc:
            fail(section, _guess_key(str(exc), given), str(exc))
        setattr(cfg, section, obj)

    train = {**values.get("train", {}), "seed": cfg.seed, "regularization": cfg.regularization}
    try:
        cfg.train = TrainConfig(**train)
    except ValueError as exc:
        fail("train", _guess_key(str(exc), train), str(exc))
    return cfg


def _guess_key(message, given):
    for key in given:
        if key in message:
            return key
    return None


def _resolve(value, base_dir) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else Path(base_dir) / p


def config_fields() -> dict[str, list[str]]:
    return {s: sorted(keys) for s, keys in _SCHEMA.items()}


__all__ = ["ConfigFileError", "ExperimentConfig", "build_config", "config_fields", "load_config"]
