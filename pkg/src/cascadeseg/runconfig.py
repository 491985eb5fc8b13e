"""Plain-text run configuration.

One file drives a whole run: ``[network]``, ``[train]``, ``[augment]``,
``[cascade]``, and ``[tiler]`` sections in ``key = value`` form with ``#``
comments.  Every section is optional and falls back to CPU-sized defaults,
but unknown sections or keys are errors rather than silent typos.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .augment import AugmentConfig
from .cascade import CascadeConfig
from .errors import EngineError, FormatError
from .network import NetworkConfig
from .tiler import MODES
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig
    train: TrainConfig
    augment: AugmentConfig
    cascade: CascadeConfig
    tiler_mode: str


def _int(s: str) -> int:
    return int(s, 10)


def _bool(s: str) -> bool:
    lowered = s.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_triple(s: str) -> tuple:
    parts = tuple(int(t) for t in s.split())
    if len(parts) != 3:
        raise ValueError(f"expected three integers, got {s!r}")
    return parts


_SCHEMA = {
    "network": {
        "levels": _int,
        "base_channels": _int,
        "num_classes": _int,
        "input_tile": _int_triple,
    },
    "train": {
        "iterations": _int,
        "lr": float,
        "momentum": float,
        "batch_size": _int,
        "val_interval": _int,
        "seed": _int,
        "weighting": str,
        "decay_every": _int,
        "decay_factor": float,
        "divergence_limit": float,
    },
    "augment": {
        "enabled": _bool,
        "max_disp": float,
        "grid_spacing": _int,
        "rot_deg": float,
        "trans_vox": float,
        "distribution": str,
    },
    "cascade": {
        "body_threshold": float,
        "dilation_radius": _int,
        "stage": _int,
    },
    "tiler": {"mode": str},
}


def _section_kwargs(parser, section: str) -> dict:
    if not parser.has_section(section):
        return {}
    schema = _SCHEMA[section]
    kwargs = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise FormatError(f"unknown key {key!r} in section [{section}]")
        try:
            kwargs[key] = schema[key](raw)
        except ValueError as e:
            raise FormatError(f"bad value for {section}.{key}: {e}") from e
    return kwargs


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",)
    )
    parser.optionxform = str  # keys are case-sensitive, like the file formats
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise FormatError(f"{source}: {e}") from e
    for section in parser.sections():
        if section not in _SCHEMA:
            raise FormatError(f"{source}: unknown section [{section}]")

    net_kwargs = _section_kwargs(parser, "network")
    aug_kwargs = _section_kwargs(parser, "augment")
    train_kwargs = _section_kwargs(parser, "train")
    cascade_kwargs = _section_kwargs(parser, "cascade")
    mode = _section_kwargs(parser, "tiler").get("mode", "none")
    if mode not in MODES:
        raise FormatError(f"{source}: tiler mode must be one of {MODES}, got {mode!r}")

    try:
        network = NetworkConfig(
            levels=2, base_channels=8, num_classes=3, input_tile=(28, 28, 28)
        )
        if net_kwargs:
            network = dataclasses.replace(network, **net_kwargs)
        augment = AugmentConfig(**aug_kwargs)
        train_kwargs.setdefault("iterations", 2000)
        train = TrainConfig(augment=augment, **train_kwargs)
        cascade = CascadeConfig(**cascade_kwargs)
    except (EngineError, ValueError) as e:
        raise FormatError(f"{source}: {e}") from e
    return RunConfig(network, train, augment, cascade, mode)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise FormatError(f"cannot read config {path}: {e}") from e
    return parse_config(text, source=str(path))
