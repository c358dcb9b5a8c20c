"""Configuration file handling.

Settings live in a JSON document with optional sections ``env``, ``train``,
``camera``, ``detector`` and ``ppm_channel_order``. Resolution order for
every effective value: command-line flag > config file > built-in default.
The environment variable GRIDLANDER_CONFIG supplies the file path when no
--config flag is given. Unknown sections or keys are rejected before any
command runs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .dqn import TrainConfig
from .env import EnvConfig
from .errors import ContractViolation
from .geometry import CameraFrame
from .persistence import DEFAULT_CHANNEL_ORDER
from .vital import VitalConfig

ENV_VAR = "GRIDLANDER_CONFIG"

_SECTIONS = ("env", "train", "camera", "detector", "ppm_channel_order")

_TUPLE_KEYS = {"x_range", "y_range", "z_range", "k_weights", "stem_channels", "center"}


@dataclass
class AppConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    camera: CameraFrame = field(default_factory=CameraFrame)
    detector: VitalConfig = field(default_factory=VitalConfig)
    channel_order: tuple[str, ...] = DEFAULT_CHANNEL_ORDER


def _build(dc_type, section: dict, where: str):
    known = {f.name for f in fields(dc_type)}
    unknown = set(section) - known
    if unknown:
        raise ContractViolation(f"unknown {where} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in section.items():
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return dc_type(**kwargs)


def parse_config_dict(raw: dict) -> AppConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ContractViolation(f"unknown config sections: {sorted(unknown)}")
    cfg = AppConfig()
    if "env" in raw:
        cfg.env = _build(EnvConfig, raw["env"], "env")
    if "train" in raw:
        cfg.train = _build(TrainConfig, raw["train"], "train")
    if "camera" in raw:
        cfg.camera = _build(CameraFrame, raw["camera"], "camera")
    if "detector" in raw:
        cfg.detector = _build(VitalConfig, raw["detector"], "detector")
        cfg.detector.validate()
    if "ppm_channel_order" in raw:
        order = tuple(raw["ppm_channel_order"])
        from .persistence import _check_channel_order

        cfg.channel_order = _check_channel_order(order)
    return cfg


def load_config(path: Optional[str]) -> AppConfig:
    """Load the config file from ``path``, the GRIDLANDER_CONFIG variable,
    or fall back to built-in defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return AppConfig()
    p = Path(path)
    if not p.exists():
        raise ContractViolation(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ContractViolation(f"config file {path} must hold a JSON object")
    return parse_config_dict(raw)
