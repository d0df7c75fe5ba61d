"""Flat ``key=value`` run configuration shared by every command.

One pair per line; ``#`` starts a comment.  Keys are grouped by prefix:
``model.*``, ``train.*``, ``data.*``, ``eval.*`` plus the top-level ``seed``.
Command-line ``--key value`` overrides are applied on top of the file, and
unknown keys are rejected in both places.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

from .metrics import EvalProtocol
from .model import ModelConfig
from .train import TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "parse_overrides"]


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_crop(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("scale", "auto", "") else int(text)


def _converter(kind) -> Callable[[str], Any]:
    return {bool: _parse_bool, int: int, float: float, str: str}[kind]


def _schema() -> dict[str, tuple[Callable[[str], Any], Any]]:
    schema: dict[str, tuple[Callable[[str], Any], Any]] = {
        "model.scale": (int, 2),
        "model.variant": (str, "full"),
        "model.k": (int, 4),
        "model.fusion": (str, "multiply"),
        "data.root": (str, "data"),
        "data.train": (str, "DIV2K"),
        "data.val": (str, "Set5"),
        "eval.channel": (str, "y"),
        "eval.border_crop": (_parse_crop, None),
        "eval.peak": (float, 255.0),
        "seed": (int, 0),
    }
    for f in dataclasses.fields(TrainConfig):
        if f.name == "seed":
            continue
        kind = type(f.default)
        schema[f"train.{f.name}"] = (_converter(kind), f.default)
    return schema


SCHEMA = _schema()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings from config-file text."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = value
    return values


def parse_overrides(args: Sequence[str]) -> dict[str, str]:
    """``["--train.lr_initial", "2e-4", ...]`` -> ``{"train.lr_initial": "2e-4"}``."""
    values: dict[str, str] = {}
    i = 0
    while i < len(args):
        flag = args[i]
        if not flag.startswith("--"):
            raise ConfigError(f"unexpected argument {flag!r}")
        key = flag[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(args):
            value = args[i + 1]
            i += 2
        else:
            raise ConfigError(f"override {flag} is missing a value")
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return values


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    @classmethod
    def resolve(cls, path=None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
        raw: dict[str, str] = {}
        if path is not None:
            path = Path(path)
            try:
                text = path.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
            raw.update(parse_config_text(text, str(path)))
        raw.update(overrides or {})
        values = {}
        for key, (convert, default) in SCHEMA.items():
            if key in raw:
                try:
                    values[key] = convert(raw[key])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {exc}") from exc
            else:
                values[key] = default
        config = cls(values)
        # Building the typed configs validates ranges and enumerations.
        try:
            config.model_config()
            config.train_config()
            config.eval_protocol()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return config

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(scale=v["model.scale"], variant=v["model.variant"], K=v["model.k"], fusion=v["model.fusion"])

    def train_config(self) -> TrainConfig:
        fields = {f.name: self.values[f"train.{f.name}"] for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
        return TrainConfig(seed=self.values["seed"], **fields)

    def eval_protocol(self) -> EvalProtocol:
        v = self.values
        return EvalProtocol(channel=v["eval.channel"], border_crop=v["eval.border_crop"], peak=v["eval.peak"])

    def split_dir(self, which: str) -> Path:
        return Path(self.values["data.root"]) / self.values[f"data.{which}"]

    def canonical_text(self) -> str:
        def fmt(value):
            if value is None:
                return "scale"
            if isinstance(value, bool):
                return "true" if value else "false"
            return repr(value) if isinstance(value, float) else str(value)

        return "".join(f"{k}={fmt(self.values[k])}\n" for k in sorted(self.values))
