"""Run configuration: a YAML key-value tree over fixed defaults.

Grammar: a YAML mapping whose top-level keys are sections (``fixture``,
``model``, ``surgery``, ...) plus ``seed``. Every key must exist in
``DEFAULTS``; anything else is rejected so typos cannot silently fall back
to defaults. Command-line overrides use dotted paths, ``--set
surgery.T=15``, with YAML-parsed values.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Iterable

import yaml


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "fixture": {
        "preset": "imbalanced-4",
        "frequencies": None,
        "dim": None,
        "separation": None,
        "entangled": None,
        "n_train": None,
        "n_sensitivity": None,
        "n_heldout": None,
        "scale": None,
    },
    "model": {"hidden": [16], "activation": "tanh", "loss": "cross_entropy", "gamma": 2.0, "class_weights": None},
    "train": {"epochs": 30, "lr": 0.005, "batch_size": 64, "optimizer": "adam"},
    "lanczos": {"m": 10, "k": 3, "tol": 1e-10, "batch": 256, "gap_factor": 1000.0},
    "synthetic": {"p": 500, "spikes": [828.6, 577.8, 310.7, 243.5, 153.2, 112.5, 58.9, 20.5],
                  "bulk_scale": 0.03},
    "slq": {"m": 90, "k": 10, "sigma2": 1e-5, "grid_points": 2000},
    "sensitivity": {"eps": 0.02},
    "surgery": {
        "T": 10,
        "K": 3,
        "lanczos_m": 10,
        "hvp_batch": 256,
        "hvp_sampling": "uniform",
        "budget_mode": "global_l2",
        "alpha_max0": 0.02,
        "alpha_min": 0.002,
        "p_exponent": 1.0,
        "protect_threshold": 0.85,
        "protect_floor": -0.01,
        "sigma_guard": 0.005,
        "drop_guard": 0.07,
    },
    "deflation": {"phases": 2, "spikes_per_phase": 3, "iters_per_phase": 5, "max_vectors": 64},
    "bulkwalk": {"steps": 20, "relative_displacement": 2.0, "wall_tol": 0.5, "history_cap": 64},
    "linearize": {"eps": 0.01, "lo": 5e-4, "hi": 5.5e-2, "points": 38},
    "stability": {"batch_sizes": [64, 128, 256, 512], "repeats": 5},
    "baselines": {"finetune_epochs": 10, "focal_gamma": 2.0,
                  "tau_grid": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0], "logit_tau": 1.0},
}


def merge(base: dict[str, Any], update: dict[str, Any], path: str = "") -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in (update or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text: str) -> dict[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form a.b=value")
    path, raw = text.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        val = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {text!r}: {exc}") from None
    tree: dict[str, Any] = {keys[-1]: val}
    for k in reversed(keys[:-1]):
        tree = {k: tree}
    return tree


def load_file(path: str | Path) -> dict[str, Any]:
    """A config file, or a run manifest (whose ``config`` entry is used)."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    if "manifest_version" in doc:
        return doc["config"]
    return doc


def resolve(layers: Iterable[dict[str, Any]], overrides: Iterable[str] = ()) -> dict[str, Any]:
    cfg = copy.deepcopy(DEFAULTS)
    for layer in layers:
        cfg = merge(cfg, layer)
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    return cfg


def require(cfg: dict[str, Any], dotted: str) -> Any:
    node: Any = cfg
    for k in dotted.split("."):
        if not isinstance(node, dict) or k not in node or node[k] is None:
            raise ConfigError(f"missing required config key {dotted!r}")
        node = node[k]
    return node
