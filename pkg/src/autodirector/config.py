"""Flat key=value configuration files.

One assignment per line, ``#`` starts a comment, keys come from a fixed
typed registry so a typo fails loudly instead of silently using a
default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .errors import DataError


@dataclass(frozen=True)
class ConfigKey:
    name: str
    type: type
    default: Any
    help: str


CONFIG_KEYS = {k.name: k for k in [
    # synthetic generator
    ConfigKey("views", int, 10, "cameras in the rig"),
    ConfigKey("channels", int, 32, "descriptor channels per view"),
    ConfigKey("duration", float, 300.0, "match length in seconds"),
    ConfigKey("seed", int, 0, "generator seed"),
    ConfigKey("noise_sigma", float, 0.1, "per-channel noise level"),
    ConfigKey("margin", float, 3.0, "class signature strength in sigmas"),
    ConfigKey("highlight_gain", float, 2.0, "highlight bump in margin units"),
    ConfigKey("events_per_minute", float, 1.2, "mean scripted event rate"),
    ConfigKey("min_gap", float, 12.0, "shortest pause between events"),
    # director
    ConfigKey("window", int, 30, "analysis buffer length in seconds"),
    ConfigKey("stride", int, 1, "buffer advance per step in seconds"),
    ConfigKey("min_confidence", float, 0.25, "detection confidence floor"),
    ConfigKey("nms_iou", float, 0.5, "suppression overlap threshold"),
    ConfigKey("tau", float, 0.7, "candidate correlation threshold"),
    ConfigKey("min_quality", float, 0.5, "candidate quality floor"),
    ConfigKey("step_budget", float, 1.0, "wall seconds allowed per stream second"),
    # training
    ConfigKey("epochs", int, 0, "training epochs, 0 means per-task default"),
    ConfigKey("lr", float, 0.0, "learning rate, 0 means per-task default"),
]}


def default_config() -> dict[str, Any]:
    return {k.name: k.default for k in CONFIG_KEYS.values()}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse overrides on top of the defaults."""
    values = default_config()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{ln}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise DataError(f"{source}:{ln}: unknown key '{key}'")
        spec = CONFIG_KEYS[key]
        try:
            values[key] = spec.type(val)
        except ValueError:
            raise DataError(
                f"{source}:{ln}: '{val}' is not a valid {spec.type.__name__}"
            ) from None
    return values


def load_config(path) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def describe_keys() -> str:
    lines = [f"  {k.name:<18} {k.type.__name__:<6} default {k.default!r:<8} {k.help}"
             for k in CONFIG_KEYS.values()]
    return "\n".join(lines)
