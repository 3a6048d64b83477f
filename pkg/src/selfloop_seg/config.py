"""Flat, schema-validated run configuration.

A run is described by a flat JSON document of typed keys. Unknown keys are
rejected, defaults are filled in, and the resolved document is written next to
every run's outputs so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any


class ConfigError(Exception):
    """A run configuration violated the schema."""


@dataclass(frozen=True)
class _Key:
    type: type
    default: Any
    choices: tuple | None = None
    elem: type | None = None  # element type for list keys


SCHEMA: dict[str, _Key] = {
    # run
    "seed": _Key(int, 0),
    "out_dir": _Key(str, "runs/out"),
    "deterministic": _Key(bool, True),
    # data
    "data_source": _Key(str, "synthetic", choices=("synthetic", "directory")),
    "data_dir": _Key(str, ""),
    "image_size": _Key(int, 48),
    "channels": _Key(int, 3),
    "train_count": _Key(int, 40),
    "test_count": _Key(int, 14),
    "blobs_min": _Key(int, 3),
    "blobs_max": _Key(int, 8),
    "noise_level": _Key(float, 0.08),
    "label_fraction": _Key(float, 0.2),
    "test_fraction": _Key(float, 0.25),
    # permutation vocabulary
    "grid_side": _Key(int, 3),
    "k_permutations": _Key(int, 30),
    "max_candidates": _Key(int, 362880),
    "greedy_objective": _Key(str, "min", choices=("min", "mean")),
    # network
    "base_width": _Key(int, 8),
    "depth": _Key(int, 3),
    "dropout_rate": _Key(float, 0.2),
    "head_pool": _Key(int, 2),
    # training
    "estimator": _Key(str, "selfloop",
                      choices=("selfloop", "softmax", "mc_dropout", "ensemble", "none")),
    "epochs": _Key(int, 40),
    "n_labeled": _Key(int, 2),
    "m_unlabeled": _Key(int, 2),
    "th": _Key(float, 0.5),
    "outer_lr": _Key(float, 1e-3),
    "q": _Key(int, 10),
    "selfloop_step_size": _Key(float, 1e-3),
    "labeled_ss": _Key(bool, True),
    "unlabeled_ss_in_joint": _Key(bool, False),
    "mc_passes": _Key(int, 10),
    "mc_rate": _Key(float, 0.2),
    "ensemble_size": _Key(int, 3),
    # evaluation / experiment grids
    "eval_threshold": _Key(float, 0.5),
    "pseudo_eval_qs": _Key(list, [3, 6, 10], elem=int),
    "compare_fractions": _Key(list, [0.2, 0.5], elem=float),
    "compare_seeds": _Key(list, [0, 1, 2], elem=int),
    "compare_methods": _Key(
        list,
        ["fully_supervised", "softmax", "mc_dropout", "ensemble", "selfloop_wo_ss", "selfloop"],
        elem=str,
    ),
}


def _coerce(key: str, value: Any, spec: _Key) -> Any:
    if spec.type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if spec.type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if spec.type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if spec.type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        if spec.choices and value not in spec.choices:
            raise ConfigError(f"{key}: must be one of {spec.choices}, got {value!r}")
        return value
    if spec.type is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        try:
            return [spec.elem(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: list elements must be {spec.elem.__name__}")
    raise ConfigError(f"{key}: unsupported schema type {spec.type}")


def resolve_config(document: dict | None = None, overrides: dict | None = None) -> dict:
    """Validate a flat config document against the schema and fill in defaults."""
    merged: dict[str, Any] = {}
    for source in (document or {}), (overrides or {}):
        for key, value in source.items():
            if value is not None:
                merged[key] = value
    unknown = sorted(set(merged) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    resolved = {}
    for key, spec in SCHEMA.items():
        resolved[key] = _coerce(key, merged[key], spec) if key in merged else spec.default
    _cross_validate(resolved)
    return resolved


def _cross_validate(cfg: dict) -> None:
    if cfg["data_source"] == "directory" and not cfg["data_dir"]:
        raise ConfigError("data_source 'directory' requires data_dir")
    if cfg["train_count"] < 1 or cfg["test_count"] < 1:
        raise ConfigError("train_count and test_count must be >= 1")
    stride = 2 ** cfg["depth"]
    if cfg["image_size"] % cfg["grid_side"] or cfg["image_size"] % stride:
        raise ConfigError(
            f"image_size {cfg['image_size']} must be divisible by grid_side "
            f"{cfg['grid_side']} and by 2**depth = {stride}"
        )
    if cfg["q"] > cfg["k_permutations"]:
        raise ConfigError(f"q ({cfg['q']}) cannot exceed k_permutations ({cfg['k_permutations']})")


def load_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        document = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})")
    if not isinstance(document, dict):
        raise ConfigError(f"{p}: top-level config must be a JSON object")
    return document


def write_effective_config(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
