"""Experiment configuration: JSON documents with strict keys and task defaults.

Resolution order is command-line overrides > file values > task defaults. The
resolved document (every default materialised) is what gets hashed and
written next to every run.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .exceptions import ConfigError
from .training import TrainConfig
from .data import ToyConfig

TASKS = ("toy_regression", "mnist_classification", "ood_eval")
METHODS = ("den", "ensemble", "mc_dropout", "bootstrap")

_COMMON = {
    "methods": list(METHODS),
    "seed": 0,
    "branch_count": 5,
    "mc_passes": 10,
    "mc_dropout_rate": None,
    "timing_repeats": 10,
    "timing_warmup": 2,
    "cache_dir": None,
}

TASK_DEFAULTS = {
    "toy_regression": {
        "model": {"trunk": [64], "branch": [64], "activation": "tanh", "dropout": 0.0},
        "train": {"epochs": 100, "batch_size": 64, "learning_rate": 1e-3},
        "data": {
            "toy": {},
            "test_fraction": 0.2,
            "ood_delta": 0.5,
            "ood_x_hi": 6.0,
        },
    },
    "mnist_classification": {
        "model": {"trunk": [256], "branch": [128], "activation": "relu", "dropout": 0.2},
        "train": {"epochs": 10, "batch_size": 128, "learning_rate": 1e-3},
        "data": {
            "data_dir": None,
            "mnist_subdir": "mnist",
            "train_per_class": None,
            "synthetic_train_per_class": 300,
            "synthetic_test_per_class": 100,
        },
    },
}
TASK_DEFAULTS["ood_eval"] = copy.deepcopy(TASK_DEFAULTS["mnist_classification"])
TASK_DEFAULTS["ood_eval"]["data"].update({"notmnist_subdir": "notmnist", "ood_samples": 1000})


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(doc: dict, overrides: dict | None = None) -> dict:
    """Fill every default for ``doc['task']`` and validate all keys and values."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    doc = dict(doc)
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    task = doc.get("task")
    if task not in TASKS:
        raise ConfigError(f"config key 'task' must be one of {TASKS}, got {task!r}")
    base = {"task": task, **copy.deepcopy(_COMMON), **copy.deepcopy(TASK_DEFAULTS[task])}
    base["train"] = {**TrainConfig().to_dict(), **base["train"]}
    if "toy" in base["data"]:
        base["data"]["toy"] = vars(ToyConfig()).copy()
    resolved = _merge(base, doc, "")
    validate(resolved)
    return resolved


def validate(cfg: dict) -> None:
    for m in cfg["methods"]:
        if m not in METHODS:
            raise ConfigError(f"config key 'methods' has unknown method {m!r}; expected {METHODS}")
    if int(cfg["branch_count"]) < 1:
        raise ConfigError("config key 'branch_count' must be >= 1")
    if int(cfg["mc_passes"]) < 2:
        raise ConfigError("config key 'mc_passes' must be >= 2")
    if int(cfg["timing_repeats"]) < 3:
        raise ConfigError("config key 'timing_repeats' must be >= 3")
    if int(cfg["timing_warmup"]) < 1:
        raise ConfigError("config key 'timing_warmup' must be >= 1")
    rate = cfg["mc_dropout_rate"]
    if rate is not None and not 0 < float(rate) < 1:
        raise ConfigError("config key 'mc_dropout_rate' must be in (0, 1)")
    TrainConfig.from_dict(cfg["train"])
    if "toy" in cfg["data"]:
        ToyConfig.from_dict(cfg["data"]["toy"])
    model = cfg["model"]
    if not model["trunk"]:
        raise ConfigError("config key 'model.trunk' needs at least one width")
    if not 0 <= float(model["dropout"]) < 1:
        raise ConfigError("config key 'model.dropout' must be in [0, 1)")


def load(path, overrides: dict | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve(doc, overrides)


def config_hash(cfg: dict) -> str:
    """Short SHA-256 of the canonical JSON form."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_snapshot(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path
