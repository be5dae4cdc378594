"""YAML experiment configs with named presets.

Resolution order: built-in defaults, then the named preset, then keys in the
file, then command-line overrides. Unknown keys, wrong types and constraint
violations raise :class:`ConfigError` naming the key and its line.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .adjust import AdjustConfig
from .datagen import DatasetSpec, Regime
from .trainer import ExperimentConfig


class ConfigError(ValueError):
    pass


_NUM = (int, float)
_OPT_INT = (int, type(None))
_OPT_STR = (str, type(None))
_OPT_NUM = (int, float, type(None))

TOP_KEYS = {
    "preset": str,
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "optimizer": str,
    "lr": _NUM,
    "momentum": _NUM,
    "baseline_mode": bool,
    "hidden_dim": int,
    "embed_dim": int,
    "separation": _NUM,
    "test_per_class": int,
    "input_size": _OPT_INT,
    "pair_threshold": _NUM,
    "data_path": _OPT_STR,
    "test_path": _OPT_STR,
    "dataset": dict,
    "adjust": dict,
}
DATASET_KEYS = {
    "c_k": int, "c_n": int, "N_1": int, "H_1": int, "M_1": int,
    "gamma_l": _NUM, "gamma_u": _NUM, "gamma_n": _OPT_NUM,
    "regime": str, "input_dim": int,
}
ADJUST_KEYS = {
    "tau_1": _NUM, "tau_2": _NUM, "alpha": _NUM, "beta": _NUM, "rho": _NUM,
    "C_base": int, "S_base": int, "lambda_1": _NUM, "lambda_2": _NUM,
}

DEFAULTS = {
    "seed": 0,
    "epochs": 30,
    "batch_size": 200,
    "optimizer": "adam",
    "lr": 5e-4,
    "momentum": 0.9,
    "baseline_mode": False,
    "hidden_dim": 128,
    "embed_dim": 64,
    "separation": 6.0,
    "test_per_class": 200,
    "input_size": None,
    "pair_threshold": 0.95,
    "data_path": None,
    "test_path": None,
    "dataset": {
        "c_k": 3, "c_n": 3, "N_1": 50, "H_1": 400, "M_1": 450,
        "gamma_l": 10, "gamma_u": 10, "gamma_n": None,
        "regime": "consistent", "input_dim": 2,
    },
    "adjust": {
        "tau_1": 2.0, "tau_2": 2.0, "alpha": 1.2, "beta": 0.8, "rho": 0.5,
        "C_base": 10, "S_base": 1024, "lambda_1": 0.5, "lambda_2": 0.5,
    },
}

# Desk-scale analogues: class counts halved into known/novel, per-class
# counts, ratios and adjustment constants from the per-dataset settings,
# synthetic 32-d features scored as 32x32 images in the scale factor.
PRESETS = {
    "toy": {},
    "cifar10-like": {
        "optimizer": "sgd", "epochs": 50, "input_size": 1024,
        "dataset": {"c_k": 5, "c_n": 5, "N_1": 500, "H_1": 4000, "M_1": 4500,
                    "gamma_l": 100, "gamma_u": 100, "input_dim": 32},
        "adjust": {"tau_1": 2.0, "tau_2": 2.0, "alpha": 1.2, "beta": 0.8,
                   "lambda_1": 0.5, "lambda_2": 0.5, "rho": 0.5},
    },
    "cifar100-like": {
        "epochs": 50, "input_size": 1024,
        "dataset": {"c_k": 50, "c_n": 50, "N_1": 50, "H_1": 400, "M_1": 450,
                    "gamma_l": 100, "gamma_u": 100, "input_dim": 32},
        "adjust": {"tau_1": 1.0, "tau_2": 1.0, "alpha": 1.05, "beta": 0.95,
                   "lambda_1": 0.5, "lambda_2": 0.5, "rho": 0.5},
    },
    "svhn-like": {
        "epochs": 50, "input_size": 1024,
        "dataset": {"c_k": 5, "c_n": 5, "N_1": 500, "H_1": 4000, "M_1": 4500,
                    "gamma_l": 100, "gamma_u": 100, "input_dim": 32},
        "adjust": {"tau_1": 2.0, "tau_2": 2.0, "alpha": 1.2, "beta": 0.8,
                   "lambda_1": 0.5, "lambda_2": 0.5, "rho": 0.5},
    },
}


def _key_lines(text: str) -> dict[tuple, int]:
    lines: dict[tuple, int] = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = prefix + (k.value,)
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config: {e}") from e
    if root is not None:
        walk(root, ())
    return lines


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _type_ok(value, expected) -> bool:
    types = expected if isinstance(expected, tuple) else (expected,)
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def _type_name(expected) -> str:
    types = expected if isinstance(expected, tuple) else (expected,)
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def _check(data: dict, lines: dict, source: str) -> None:
    def where(path):
        line = lines.get(path)
        return f"{source}:{line}" if line else source

    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    for key, value in data.items():
        if key not in TOP_KEYS:
            raise ConfigError(f"{where((key,))}: unknown key '{key}'")
        if not _type_ok(value, TOP_KEYS[key]):
            raise ConfigError(f"{where((key,))}: key '{key}' must be {_type_name(TOP_KEYS[key])}, got {value!r}")
    for section, schema in (("dataset", DATASET_KEYS), ("adjust", ADJUST_KEYS)):
        for key, value in data.get(section, {}).items():
            path = (section, key)
            if key not in schema:
                raise ConfigError(f"{where(path)}: unknown key '{section}.{key}'")
            if not _type_ok(value, schema[key]):
                raise ConfigError(
                    f"{where(path)}: key '{section}.{key}' must be {_type_name(schema[key])}, got {value!r}"
                )
    if "preset" in data and data["preset"] not in PRESETS:
        raise ConfigError(f"{where(('preset',))}: unknown preset '{data['preset']}' (choose from {sorted(PRESETS)})")


_CONSTRAINTS = [
    (("adjust", "tau_1"), lambda r: r["adjust"]["tau_1"] > 0, "must be > 0"),
    (("adjust", "tau_2"), lambda r: r["adjust"]["tau_2"] > 0, "must be > 0"),
    (("adjust", "alpha"), lambda r: r["adjust"]["alpha"] >= r["adjust"]["beta"], "must be >= adjust.beta"),
    (("adjust", "rho"), lambda r: 0 <= r["adjust"]["rho"] <= 1, "must lie in [0, 1]"),
    (("dataset", "gamma_l"), lambda r: r["dataset"]["gamma_l"] >= 1, "must be >= 1"),
    (("dataset", "gamma_u"), lambda r: r["dataset"]["gamma_u"] >= 1, "must be >= 1"),
    (("dataset", "gamma_n"), lambda r: r["dataset"]["gamma_n"] is None or r["dataset"]["gamma_n"] >= 1, "must be >= 1"),
    (("dataset", "regime"), lambda r: r["dataset"]["regime"] in {m.value for m in Regime}, "must be consistent, uniform or reversed"),
    (("epochs",), lambda r: r["epochs"] >= 1, "must be >= 1"),
    (("batch_size",), lambda r: r["batch_size"] >= 1, "must be >= 1"),
    (("lr",), lambda r: r["lr"] >= 0, "must be >= 0"),
    (("optimizer",), lambda r: r["optimizer"] in ("adam", "sgd"), "must be 'adam' or 'sgd'"),
]


def resolve(data: dict | None = None, overrides: dict | None = None, source: str = "<config>",
            lines: dict | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed mapping."""
    data = {} if data is None else data
    lines = lines or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check(data, lines, source)
    _check(overrides, {}, "<command line>")
    preset = overrides.get("preset", data.get("preset", "toy"))
    raw = _merge(_merge(_merge(DEFAULTS, PRESETS[preset]), data), overrides)
    raw.pop("preset", None)
    for path, ok, msg in _CONSTRAINTS:
        if not ok(raw):
            line = lines.get(path)
            loc = f"{source}:{line}" if line else source
            value = raw
            for p in path:
                value = value[p]
            raise ConfigError(f"{loc}: key '{'.'.join(path)}' {msg}, got {value!r}")
    ds = dict(raw.pop("dataset"))
    ds["seed"] = raw["seed"]
    try:
        return ExperimentConfig(dataset=DatasetSpec(**ds), adjust=AdjustConfig(**raw.pop("adjust")), **raw)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e


def parse_config_text(text: str, overrides: dict | None = None, source: str = "<string>") -> ExperimentConfig:
    lines = _key_lines(text)
    data = yaml.safe_load(text)
    return resolve(data, overrides, source, lines)


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), overrides, str(path))


def config_to_yaml(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d["dataset"].pop("seed")
    return yaml.safe_dump(d, sort_keys=False)
