"""Versioned JSON run configurations.

Every config file carries ``"schema_version": 1``. Keys are matched to
dataclass fields exactly, so a typo is an error rather than a silent
default. Nested objects map onto nested dataclasses and JSON arrays onto
tuples. A resolved config (all defaults filled in) is what gets echoed next
to a run's outputs.
"""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional

from puffprint.decoder import DEFAULT_DECODER_TRAIN, DEFAULT_HIDDEN, SynthConfig
from puffprint.distill import DEFAULT_STUDENT_TRAIN, DEFAULT_TEACHER_TRAIN, TaskSpec
from puffprint.eval import GridConfig
from puffprint.nn import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A config file that cannot be turned into a valid run description."""


@dataclass(frozen=True)
class DecoderJob:
    """``train-decoder`` input: the synthetic set, the network and its training."""

    synth: SynthConfig = SynthConfig()
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    train: TrainConfig = DEFAULT_DECODER_TRAIN


@dataclass(frozen=True)
class RunConfig:
    """``distill`` input for one fingerprinted student.

    ``seed`` drives the bit-flip noise and the student initialisation;
    the task and teacher carry their own seeds. ``probes=None`` writes logit
    differences for the whole query set.
    """

    task: TaskSpec = TaskSpec()
    teacher_hidden: tuple[int, ...] = (128, 128)
    student_hidden: tuple[int, ...] = (64,)
    teacher_train: TrainConfig = DEFAULT_TEACHER_TRAIN
    student_train: TrainConfig = DEFAULT_STUDENT_TRAIN
    epsilon: float = 0.05
    bits_per_logit: int = 1
    p_flip: float = 0.05
    temperature: float = 0.0
    seed: int = 0
    probes: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.bits_per_logit < 1:
            raise ValueError("bits_per_logit must be >= 1")
        if self.probes is not None and self.probes < 1:
            raise ValueError("probes must be >= 1 or null")


KINDS: dict[str, type] = {"synth": DecoderJob, "run": RunConfig, "grid": GridConfig}


def _strip_optional(tp: Any) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _convert(tp: Any, value: Any, where: str) -> Any:
    if value is None:
        return None
    tp = _strip_optional(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return build(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array")
        (inner, *_) = typing.get_args(tp) or (Any,)
        return tuple(_convert(inner, v, f"{where}[{i}]") for i, v in enumerate(value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is str and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    if tp is bool and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true or false, got {value!r}")
    return value


def build(cls: type, data: dict, where: str = "config") -> Any:
    """Construct dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def parse(kind: str, data: dict) -> Any:
    if kind not in KINDS:
        raise ConfigError(f"unknown config kind {kind!r}")
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    body = dict(data)
    version = body.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return build(KINDS[kind], body, kind)


def load(kind: str, path: str | os.PathLike) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse(kind, data)


def resolved(obj: Any) -> dict:
    """Fully explicit JSON-ready form of a config, defaults included."""
    return {"schema_version": SCHEMA_VERSION, **asdict(obj)}


def dumps(obj: Any) -> str:
    return json.dumps(resolved(obj), indent=2, sort_keys=True) + "\n"


def echo(obj: Any, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


__all__ = ["ConfigError", "DecoderJob", "KINDS", "RunConfig", "SCHEMA_VERSION", "build", "dumps", "echo", "load",
           "parse", "resolved"]
