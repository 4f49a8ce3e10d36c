"""INI-style config files for aircraft, controller, task and trainer settings.

Keys mirror the dataclass field names; vectors are comma-separated.
"""
from __future__ import annotations

import configparser
import dataclasses
from importlib import resources
from pathlib import Path

from atfg.dynamics import AircraftConfig
from atfg.env import TaskConfig
from atfg.pidctl import MixerTable, PidConfig
from atfg.ppo import TrainConfig


class ConfigError(ValueError):
    """A config file has an unknown key or a value that fails validation."""


def data_path(name: str) -> Path:
    return Path(str(resources.files("atfg") / "data" / name))


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(text: str, default, name: str):
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(float(text)) if float(text).is_integer() else int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if default and isinstance(default[0], bool):
            return tuple(_parse_bool(p) for p in parts)
        if default and isinstance(default[0], int) and not isinstance(default[0], bool):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    if default is None:
        if text.lower() in ("", "none"):
            return None
        parts = [p.strip() for p in text.split(",")]
        return tuple(float(p) for p in parts) if len(parts) > 1 else float(text)
    raise ValueError(f"unsupported field type for {name}")


def _load_dataclass(cls, section: configparser.SectionProxy, section_name: str, skip=()):
    defaults = cls()
    kwargs = {}
    # Fields declared with a None default are derived; parse them as optional.
    examples = {f.name: None if f.default is None else getattr(defaults, f.name) for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in examples:
            raise ConfigError(f"[{section_name}] unknown key {key!r}")
        try:
            kwargs[key] = _parse_value(raw, examples[key], key)
        except ValueError as exc:
            raise ConfigError(f"[{section_name}] bad value for {key!r}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section_name}] {exc}") from exc


def _read(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser.read(path)
    return parser


def _section(parser, name, path):
    if not parser.has_section(name):
        raise ConfigError(f"{path}: missing [{name}] section")
    return parser[name]


def load_aircraft(path) -> AircraftConfig:
    parser = _read(path)
    return _load_dataclass(AircraftConfig, _section(parser, "aircraft", path), "aircraft")


def load_task(path) -> TaskConfig:
    parser = _read(path)
    return _load_dataclass(TaskConfig, _section(parser, "task", path), "task")


def load_train(path) -> TrainConfig:
    parser = _read(path)
    return _load_dataclass(TrainConfig, _section(parser, "train", path), "train")


AXIS_KEYS = ("roll", "pitch", "yaw")
MOTOR_KEYS = ("motor1", "motor2", "motor3", "motor4")


def load_controller(path) -> tuple[PidConfig, MixerTable]:
    """``[pid]`` holds per-axis ``kp, ki, kd``; ``[mixer]`` holds one row per motor."""
    parser = _read(path)
    pid_sec = _section(parser, "pid", path)
    mix_sec = _section(parser, "mixer", path)
    try:
        gains = tuple(_parse_value(pid_sec[k], (0.0,), k) for k in AXIS_KEYS)
        rows = tuple(_parse_value(mix_sec[k], (0.0,), k) for k in MOTOR_KEYS)
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc.args[0]!r}") from exc
    pid = _load_dataclass(PidConfig, pid_sec, "pid", skip=AXIS_KEYS)
    mixer = _load_dataclass(MixerTable, mix_sec, "mixer", skip=MOTOR_KEYS)
    try:
        return dataclasses.replace(pid, gains=gains), dataclasses.replace(mixer, rows=rows)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def dump_dataclass(obj, section: str) -> str:
    lines = [f"[{section}]"]
    for f in dataclasses.fields(obj):
        lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def dump_controller(pid: PidConfig, mixer: MixerTable) -> str:
    lines = ["[pid]"]
    lines += [f"{k} = {_format(g)}" for k, g in zip(AXIS_KEYS, pid.gains)]
    lines += [f"integrator_limit = {pid.integrator_limit!r}", f"output_limit = {pid.output_limit!r}", f"dt = {pid.dt!r}"]
    lines += ["", "[mixer]"]
    lines += [f"{k} = {_format(r)}" for k, r in zip(MOTOR_KEYS, mixer.rows)]
    lines += [f"throttle = {mixer.throttle!r}", f"axis_sign = {_format(mixer.axis_sign)}"]
    return "\n".join(lines) + "\n"
