"""Experiment configuration: one YAML/JSON file per run.

Every command has a table of keys with defaults. Unknown keys are rejected
and the fully resolved table is echoed into the run directory.
"""
from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


def _workers_default() -> int:
    return os.cpu_count() or 1


DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {
        "model": None,  # {"name": ..., "params": {...}}
        "strike": 1.1,
        "s0": 1.0,
        "omega0": 0.1,
        "T": 1.0,
        "dt": 1e-3,
        "n_paths": 10_000,
        "seed": 0,
        "band_n": 1000.0,
        "antithetic": False,
        "workers": None,
        "chunk_size": 4096,
        "z_budget": 3.0,
        "write_paths": False,
        "max_path_rows": 1_000_000,
        "output_dir": "irvlab-run",
    },
    "ssvi": {
        "psi": 2.0,
        "theta0": None,  # default: 2 * frak_B_inverse(psi^2)
        "sigma": 0.3,
        "T": 1.0,
        "dt": 1e-3,
        "n_paths": 1000,
        "seed": 0,
        "band_n": 1e6,
        "s0": 1.0,
        "k_min": -1.0,
        "k_max": 1.0,
        "n_strikes": 21,
        "residual_draws": 10_000,
        "residual_tol": 1e-12,
        "snapshot_paths": 2,
        "write_snapshots": True,
        "output_dir": "irvlab-run",
    },
    "carr-sun-audit": {
        "a0": 1.0,
        "a1": 1.0,
        "rho": 0.5,
        "k_min": -2.0,
        "k_max": 2.0,
        "n_k": 41,
        "threshold": 1e-6,
        "output_dir": "irvlab-run",
    },
    "static-arb": {
        "input": None,
        "tol": 0.0,
        "output_dir": "irvlab-run",
    },
    "sandwich": {
        "variant": "single",
        "strikes": [1.2],
        "T": 1.0,
        "s0": 1.0,
        "sigma": 0.2,
        "n_horizons": None,
        "dt": 1e-3,
        "n_paths": 10_000,
        "seed": 0,
        "chunk_size": 1000,
        "extract_band_n": None,
        "write_paths": False,
        "max_path_rows": 1_000_000,
        "output_dir": "irvlab-run",
    },
}

MODEL_KEYS = {"name", "params"}


def load_config(command: str, path: str | os.PathLike, seed: int | None = None) -> dict:
    """Read, validate and resolve a configuration file for ``command``."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("the config file must hold a mapping at top level")
    schema = DEFAULTS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    cfg = copy.deepcopy(schema)
    cfg.update(raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if "workers" in cfg and cfg["workers"] is None:
        cfg["workers"] = _workers_default()
    if command == "simulate":
        model = cfg["model"]
        if not isinstance(model, dict) or "name" not in model:
            raise ConfigError("simulate needs a model table with a 'name'")
        extra = sorted(set(model) - MODEL_KEYS)
        if extra:
            raise ConfigError(f"unknown keys in model table: {extra}")
        model.setdefault("params", {})
        if not isinstance(model["params"], dict):
            raise ConfigError("model.params must be a mapping")
    if command == "static-arb":
        if not cfg["input"]:
            raise ConfigError("static-arb needs an 'input' snapshot CSV")
        inp = Path(cfg["input"])
        if not inp.is_absolute():
            cfg["input"] = str((p.parent / inp).resolve())
    _check_types(cfg, schema)
    return cfg


def _check_types(cfg: dict, schema: dict) -> None:
    for key, default in schema.items():
        val = cfg[key]
        if val is None or default is None:
            continue
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{key} must be true/false, got {val!r}")
        elif isinstance(default, (int, float)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{key} must be a number, got {val!r}")
            if isinstance(default, int) and not isinstance(default, bool) and float(val) != int(val):
                raise ConfigError(f"{key} must be an integer, got {val!r}")
        elif isinstance(default, str):
            if not isinstance(val, str):
                raise ConfigError(f"{key} must be a string, got {val!r}")
        elif isinstance(default, list):
            if not isinstance(val, list):
                raise ConfigError(f"{key} must be a list, got {val!r}")
