"""Pipeline configuration: strict JSON parsing, defaults and validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from ..logbseg.kernels import DEFAULT_SCALES

STAGES = ("phantom", "train", "segment", "reconstruct", "deform", "evaluate")

# Upstream stages whose outputs each stage reads.
DEPENDENCIES = {
    "phantom": (),
    "train": ("phantom",),
    "segment": ("phantom", "train"),
    "reconstruct": ("segment",),
    "deform": ("phantom", "reconstruct"),
    "evaluate": ("phantom", "segment", "reconstruct"),
}

_REQUIRED = object()

DEFAULTS = {
    "seed": _REQUIRED,
    "stages": _REQUIRED,
    "out_dir": "run",
    "input_dir": None,
    "case": "case0",
    "phantom": {
        "kind": "tube",  # tube | branching | random | custom | import
        "dims": [64, 64, 64],
        "spacing": [1.0, 1.0, 1.0],
        "radius": 5.0,
        "axis": 0,
        "trunk_radius": 6.0,
        "branch_radius": 3.0,
        "n_branches": 2,
        "centerlines": None,
        "foreground": 400.0,
        "background": 50.0,
        "noise_sd": 10.0,
        "blur_sigma": 1.0,
        "cap_buffer": 1.0,
        "train_cases": 10,
        "train_noise_sd": 10.0,
    },
    "preprocess": {"clip_lo": 0.0, "clip_hi": 500.0, "crop_dims": [64, 64, 64]},
    "network": {
        "blocks": 2,
        "channels": 4,
        "scales": [list(s) for s in DEFAULT_SCALES],
        "learn_sigma": True,
        "init_logvar": -6.0,
    },
    "train": {"epochs": 200, "lr": 1e-3, "batch_size": 10, "crop": [32, 32, 32], "pool_size": 24, "beta": None},
    "segment": {"samples": 8, "overlap": 16, "threshold": 0.5},
    "reconstruct": {
        "iso": 0.5,
        "target_vertices": 1500,
        "remesh_iterations": 12,
        "smooth_steps": 50,
        "smooth_weights": [0.2, 0.01, 0.1],
        "smooth_lr": 20.0,
    },
    "deform": {
        "epochs": 300,
        "lr": 0.05,
        "n_control": 200,
        "sigma": None,
        "T": 1.0,
        "steps": 15,
        "weights": [1.0, 0.2, 0.01, 0.1],
        "eps": 1e-8,
        "gate": True,
    },
    "evaluate": {"snr_window": 5},
}

PHANTOM_KINDS = ("tube", "branching", "random", "custom", "import")


class ConfigError(ValueError):
    pass


class DependencyError(ConfigError):
    pass


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _merge(defaults, given, path):
    out = {}
    for k in given:
        if k not in defaults:
            raise ConfigError(f"unknown key {path + k!r}")
    for k, dv in defaults.items():
        if k not in given:
            if dv is _REQUIRED:
                raise ConfigError(f"missing required key {path + k!r}")
            out[k] = copy.deepcopy(dv)
        elif isinstance(dv, dict):
            if not isinstance(given[k], dict):
                raise ConfigError(f"{path + k!r} must be an object")
            out[k] = _merge(dv, given[k], path + k + ".")
        else:
            out[k] = given[k]
    return out


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_types(cfg, defaults, path=""):
    for k, dv in defaults.items():
        v = cfg[k]
        name = path + k
        if isinstance(dv, dict):
            _check_types(v, dv, name + ".")
        elif v is None or dv is None or dv is _REQUIRED:
            continue
        elif isinstance(dv, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{name!r} must be true or false")
        elif _is_int(dv):
            if not _is_int(v):
                raise ConfigError(f"{name!r} must be an integer")
        elif isinstance(dv, float):
            if not _is_num(v):
                raise ConfigError(f"{name!r} must be a number")
        elif isinstance(dv, str):
            if not isinstance(v, str):
                raise ConfigError(f"{name!r} must be a string")
        elif isinstance(dv, list):
            if not isinstance(v, list) or len(v) != len(dv) and k != "scales":
                raise ConfigError(f"{name!r} must be a list of {len(dv)} values")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    stages: tuple
    out_dir: str
    input_dir: str | None
    case: str
    params: dict

    def block(self, name):
        return copy.deepcopy(self.params[name])

    def to_dict(self):
        d = {"seed": self.seed, "stages": list(self.stages), "out_dir": self.out_dir,
             "input_dir": self.input_dir, "case": self.case}
        d.update(copy.deepcopy(self.params))
        return d

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return config_from_dict(d)


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw, "")
    _check_types(cfg, DEFAULTS)
    seed = cfg["seed"]
    if not _is_int(seed) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    stages = cfg["stages"]
    if not isinstance(stages, list) or not stages:
        raise ConfigError("stages must be a non-empty list")
    for s in stages:
        if s not in STAGES:
            raise ConfigError(f"unknown stage {s!r}; expected one of {', '.join(STAGES)}")
    if len(set(stages)) != len(stages):
        raise ConfigError("stages must not repeat")
    _validate_blocks(cfg)
    params = {k: cfg[k] for k in DEFAULTS if isinstance(DEFAULTS[k], dict)}
    ordered = tuple(s for s in STAGES if s in stages)
    return PipelineConfig(seed, ordered, str(cfg["out_dir"]), cfg["input_dir"], str(cfg["case"]), params)


def _validate_blocks(cfg):
    ph = cfg["phantom"]
    if ph["kind"] not in PHANTOM_KINDS:
        raise ConfigError(f"phantom.kind must be one of {', '.join(PHANTOM_KINDS)}")
    if ph["kind"] == "custom" and not ph["centerlines"]:
        raise ConfigError("phantom.kind 'custom' needs phantom.centerlines")
    if ph["kind"] == "import" and not cfg["input_dir"]:
        raise ConfigError("phantom.kind 'import' needs input_dir")
    if "train" in cfg["stages"] and ph["train_cases"] < 4:
        raise ConfigError("phantom.train_cases must be at least 4 when training")
    pre = cfg["preprocess"]
    if not pre["clip_lo"] < pre["clip_hi"]:
        raise ConfigError("preprocess.clip_lo must be below clip_hi")
    net = cfg["network"]
    if net["blocks"] < 1 or net["channels"] < 1:
        raise ConfigError("network.blocks and network.channels must be positive")
    for s in net["scales"]:
        if not (isinstance(s, list) and len(s) == 2 and _is_int(s[0]) and _is_num(s[1])):
            raise ConfigError("network.scales entries must be [size, sigma]")
    tr = cfg["train"]
    if tr["epochs"] < 0 or tr["batch_size"] < 2 or tr["batch_size"] % 2:
        raise ConfigError("train.batch_size must be a positive even number and epochs non-negative")
    if cfg["segment"]["samples"] < 2:
        raise ConfigError("segment.samples must be at least 2 for an ensemble")
    de = cfg["deform"]
    if de["epochs"] < 0 or de["n_control"] < 1 or de["steps"] < 1:
        raise ConfigError("deform.epochs, n_control and steps are out of range")
    if any(w < 0 for w in de["weights"]):
        raise ConfigError("deform.weights must be non-negative")
    w = cfg["evaluate"]["snr_window"]
    if w < 3 or w % 2 == 0:
        raise ConfigError("evaluate.snr_window must be an odd integer >= 3")


def parse_config_text(text):
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(raw)


def parse_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)
