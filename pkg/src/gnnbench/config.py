"""Run configuration: one JSON document per benchmark run.

The schema below is the single source of truth for field names, types,
defaults, and choices; ``validate_config`` applies it and reports problems
by field path ("train.lr: must be positive"), while ``load_config`` adds
the file name and, for syntax errors, the line number. ``config_hash``
fingerprints the normalized document so outputs can be traced back to the
exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from .datasets import GENERATORS
from .errors import ConfigError, DataError, ParseError
from .heads import READOUTS
from .models import MODEL_KINDS
from .mp_layers import VARIANTS

_REQUIRED = object()

PE_KINDS = ("laplacian", "index")
SIGN_MODES = ("random_flip", "fixed", "absolute")
ORDER_MODES = ("fixed", "random")
AGGREGATORS = ("mean", "maxpool")
LOSS_NAMES = ("auto", "ce", "weighted_ce", "l1")

SCHEMA = {
    "name": {"type": "str", "default": "run"},
    "dataset": {
        "generator": {"type": "str", "default": None, "nullable": True,
                      "choices": tuple(sorted(GENERATORS))},
        "path": {"type": "str", "default": None, "nullable": True},
        "seed": {"type": "int", "default": 0, "min": 0},
        "params": {"type": "dict", "default": {}},
    },
    "model": {
        "kind": {"type": "str", "default": _REQUIRED, "choices": MODEL_KINDS},
        "d": {"type": "int", "default": 64, "min": 1},
        "n_layers": {"type": "int", "default": 4, "min": 1},
        "variant": {"type": "str", "default": "default", "choices": VARIANTS},
        "heads": {"type": "int", "default": 4, "min": 1},
        "kernels": {"type": "int", "default": 3, "min": 1},
        "aggregator": {"type": "str", "default": "maxpool", "choices": AGGREGATORS},
        "use_bn": {"type": "bool", "default": True},
        "use_residual": {"type": "bool", "default": True},
        "use_graphnorm": {"type": "bool", "default": False},
        "readout": {"type": "str", "default": "mean", "choices": READOUTS},
        "param_budget": {"type": "int", "default": None, "nullable": True, "min": 1},
        "pe": {"type": "pe", "default": None, "nullable": True},
    },
    "train": {
        "lr": {"type": "num", "default": 1e-3, "positive": True},
        "lr_factor": {"type": "num", "default": 0.5},
        "patience": {"type": "int", "default": 10, "min": 1},
        "min_lr": {"type": "num", "default": 1e-5, "positive": True},
        "max_epochs": {"type": "int", "default": 500, "min": 0},
        "batch_size": {"type": "int", "default": 128, "min": 1},
        "virtual_batch": {"type": "int", "default": 4, "min": 1},
        "loss": {"type": "str", "default": "auto", "choices": LOSS_NAMES},
        "seeds": {"type": "seeds", "default": 4},
        "fold": {"type": "int", "default": 0, "min": 0},
        "max_wallclock": {"type": "num", "default": None, "nullable": True,
                          "positive": True},
    },
}

PE_SCHEMA = {
    "kind": {"type": "str", "default": "laplacian", "choices": PE_KINDS},
    "k": {"type": "int", "default": _REQUIRED, "min": 1},
    "sign_mode": {"type": "str", "default": "random_flip", "choices": SIGN_MODES},
    "order_mode": {"type": "str", "default": "fixed", "choices": ORDER_MODES},
}


@dataclass(frozen=True)
class BenchmarkConfig:
    """A validated configuration document plus its fingerprint."""

    name: str
    dataset: dict
    model: dict
    train: dict
    hash: str


def _check_scalar(value, path, rule):
    kind = rule["type"]
    if value is None:
        if rule.get("nullable"):
            return None
        raise ConfigError(f"{path}: must not be null")
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {type(value).__name__}")
    elif kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif kind == "num":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif kind == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    choices = rule.get("choices")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}: {value!r} is not one of {sorted(choices)}")
    if "min" in rule and value < rule["min"]:
        raise ConfigError(f"{path}: must be >= {rule['min']}")
    if rule.get("positive") and value <= 0:
        raise ConfigError(f"{path}: must be positive")
    return value


def _check_seeds(value, path):
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a count or list of integers")
    if isinstance(value, int):
        if value < 1:
            raise ConfigError(f"{path}: seed count must be >= 1")
        return tuple(range(value))
    if isinstance(value, list) and value and all(
            isinstance(s, int) and not isinstance(s, bool) for s in value):
        if len(set(value)) != len(value):
            raise ConfigError(f"{path}: duplicate seeds")
        return tuple(value)
    raise ConfigError(f"{path}: expected a count or non-empty list of integers")


def _apply_schema(doc, schema, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    unknown = set(doc) - set(schema)
    if unknown:
        raise ConfigError(
            f"{path + '.' if path else ''}{sorted(unknown)[0]}: unknown field "
            f"(valid: {', '.join(sorted(schema))})")
    out = {}
    for key, rule in schema.items():
        where = f"{path}.{key}" if path else key
        if isinstance(rule, dict) and "type" not in rule:  # nested block
            out[key] = _apply_schema(doc.get(key, {}), rule, where)
            continue
        if key not in doc:
            if rule["default"] is _REQUIRED:
                raise ConfigError(f"{where}: required field is missing")
            out[key] = rule["default"]
            continue
        value = doc[key]
        if rule["type"] == "seeds":
            out[key] = _check_seeds(value, where)
        elif rule["type"] == "pe":
            out[key] = None if value is None else _apply_schema(value, PE_SCHEMA, where)
        else:
            out[key] = _check_scalar(value, where, rule)
    return out


def resolve_data_path(path, env=None):
    """Relative dataset paths resolve under BENCH_DATA_DIR when set."""
    env = os.environ if env is None else env
    root = env.get("BENCH_DATA_DIR")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def validate_config(doc, check_paths=True, env=None):
    """Apply the schema; returns a BenchmarkConfig with defaults filled."""
    norm = _apply_schema(doc, SCHEMA, "")
    ds = norm["dataset"]
    if (ds["generator"] is None) == (ds["path"] is None):
        raise ConfigError("dataset: specify exactly one of generator / path")
    if ds["path"] is not None and check_paths:
        resolved = resolve_data_path(ds["path"], env)
        if not os.path.exists(resolved):
            raise DataError(f"dataset.path: {resolved} does not exist")
    model = norm["model"]
    if model["pe"] is None:
        norm["model"] = dict(model, pe=None)
    return BenchmarkConfig(
        name=norm["name"],
        dataset=norm["dataset"],
        model=norm["model"],
        train=norm["train"],
        hash=config_hash(norm),
    )


def load_config(path, check_paths=True, env=None):
    """Read and validate a JSON config file.

    Syntax problems carry the offending line number; semantic problems the
    field path.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from exc
    try:
        return validate_config(doc, check_paths=check_paths, env=env)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_hash(doc):
    """Short stable fingerprint of a normalized configuration."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
