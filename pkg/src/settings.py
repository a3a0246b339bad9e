"""
Configuration module for the eigenstate learnability lab.
This module loads the JSON configuration, overlays presets, flat key=value
parameter files and command-line flags, and derives the named seeds used by
every stochastic stage of an experiment.
"""

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from loguru import logger


CODE_VERSION = "0.1.0"

# Flat keys (parameter files and long CLI flags) mapped to config sections
FLAG_PATHS: Dict[str, Tuple[str, str]] = {
    "l": ("spin_chain", "L"),
    "protocol": ("protocol", "kind"),
    "m": ("protocol", "M"),
    "m_index": ("protocol", "m_index"),
    "samples": ("training", "samples"),
    "hidden": ("encoder", "hidden"),
    "epochs": ("training", "epochs"),
    "lr": ("training", "learning_rate"),
    "gamma": ("loss", "gamma"),
    "seed": ("training", "seed"),
    "batch_size": ("training", "batch_size"),
    "loss_mode": ("training", "loss_mode"),
    "sampling": ("training", "sampling_mode"),
    "threads": ("runtime", "threads"),
    "out": ("output", "directory"),
}

# Keys that may carry a list of values for the sweep axes
AXIS_KEYS = ("m", "m_index", "samples", "hidden")


def load_config(config_path: str) -> Dict[str, Any]:
    """
    Load the JSON configuration file.

    Args:
        config_path: Path to the configuration file

    Returns:
        Dict: Parsed configuration
    """
    with open(config_path, 'r') as f:
        config = json.load(f)
    config.setdefault("runtime", {"threads": 1})
    config.setdefault("axes", {})
    return config


def _parse_scalar(text: str) -> Any:
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_value(text: str) -> Any:
    """Parse a flat-file value; comma-separated values become lists."""
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip()]
    return _parse_scalar(text)


def load_params_file(params_path: str) -> Dict[str, Any]:
    """
    Read a flat key=value parameter file mirroring the long CLI flags.

    Args:
        params_path: Path to the parameter file

    Returns:
        Dict: Flat mapping of flag names to parsed values
    """
    params = {}
    with open(params_path, 'r') as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{params_path}:{line_no}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key != "preset" and key not in FLAG_PATHS:
                raise ValueError(f"{params_path}:{line_no}: unknown key {key!r}")
            params[key] = parse_value(value)
    return params


def deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    """Return a copy of base with overlay merged in recursively."""
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_flat(config: Dict[str, Any], flat: Dict[str, Any]) -> Dict[str, Any]:
    """
    Apply flat flag-style overrides to a configuration.

    Axis keys keep their full value list under ``config["axes"]`` and set
    the scalar default to the first entry.
    """
    config = copy.deepcopy(config)
    for key, value in flat.items():
        if value is None or key == "preset":
            continue
        if key not in FLAG_PATHS:
            raise ValueError(f"Unknown configuration key: {key}")
        section, field = FLAG_PATHS[key]
        if key in AXIS_KEYS:
            values = list(value) if isinstance(value, (list, tuple)) else [value]
            config.setdefault("axes", {})[key] = values
            value = values[0]
        elif isinstance(value, (list, tuple)):
            raise ValueError(f"Key {key} takes a single value, got {value}")
        config.setdefault(section, {})[field] = value
    return config


def resolve_settings(config_path: str,
                     preset: Optional[str] = None,
                     params_path: Optional[str] = None,
                     flags: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Resolve the effective configuration.

    Order, later wins: JSON defaults, preset, parameter file, CLI flags.

    Args:
        config_path: Path to the JSON configuration
        preset: Optional preset name (desk, paper)
        params_path: Optional flat key=value file
        flags: Flat mapping of explicitly given CLI flags

    Returns:
        Dict: Resolved configuration
    """
    config = load_config(config_path)
    file_params = load_params_file(params_path) if params_path else {}
    flags = flags or {}

    preset = flags.get("preset") or file_params.get("preset") or preset
    if preset:
        presets = config.get("presets", {})
        if preset not in presets:
            raise ValueError(f"Unknown preset: {preset} (available: {sorted(presets)})")
        config = deep_merge(config, presets[preset])
        logger.debug(f"Applied preset {preset}")
    config["preset"] = preset

    config = apply_flat(config, file_params)
    config = apply_flat(config, flags)

    if os.getenv("LEARNABILITY_LOG_LEVEL"):
        config["logging"]["level"] = os.getenv("LEARNABILITY_LOG_LEVEL")
    if os.getenv("LEARNABILITY_OUT") and "out" not in flags:
        config["output"]["directory"] = os.getenv("LEARNABILITY_OUT")

    config["config_path"] = str(Path(config_path))
    return config


def axis_values(config: Dict[str, Any], key: str, default: Iterable[Any]) -> List[Any]:
    """Sweep-axis values: explicit flag/file list if given, else the suite default."""
    values = config.get("axes", {}).get(key)
    return sorted(values) if values else sorted(default)


def derive_seed(master_seed: int, label: str) -> int:
    """
    Derive an independent seed for a named stochastic stage.

    Args:
        master_seed: The run's master seed
        label: Stage label (sampling, init, split, batching, ...)

    Returns:
        int: 63-bit seed
    """
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
