"""Run configuration: a versioned YAML tree with defaults, validation, and a
reproducibility fingerprint.

Every experiment reads one config file; CLI flags override individual values.
The fingerprint hashes the fully resolved tree plus the seed, so two reports
with the same fingerprint came from identical settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .classifier import DEFAULT_HIDDEN as AC_HIDDEN, DEFAULT_LATENT, DEFAULT_NU
from .detector import DEFAULT_C_MAD, DEFAULT_HIDDEN as AD_HIDDEN
from .errors import ConfigError
from .flows import BENIGN
from .util import canonical_json, sha256_hex

CONFIG_VERSION = 1

DEFAULTS: dict = {
    "config_version": CONFIG_VERSION,
    "seed": 7,
    "features": {"dim": 20},
    "normalization": "minmax",
    "generator": {
        "classes": [
            {"name": "benign", "label": "benign", "count": 1200, "mean": 0.0, "scale": 0.5},
            {"name": "flood", "label": 0, "count": 300, "mean": 2.2, "scale": 0.5},
            {"name": "scan", "label": 1, "count": 300, "mean": 3.0, "scale": 0.5},
            {"name": "slow", "label": 2, "count": 300, "mean": 3.8, "scale": 0.5},
        ]
    },
    "splits": {"train": 0.6, "val": 0.2, "test": 0.2, "min_class_size": 10},
    "partition": {"mode": "iid", "alpha": 0.5},
    "detector": {
        "hidden": list(AD_HIDDEN),
        "c_mad": DEFAULT_C_MAD,
        "epochs": 40,
        "batch_size": 32,
        "learning_rate": 1.0,
    },
    "classifier": {
        "hidden": list(AC_HIDDEN),
        "latent": DEFAULT_LATENT,
        "nu": DEFAULT_NU,
        "epochs": 60,
        "batch_size": 32,
        "learning_rate": 0.01,
    },
    "federated": {
        "ad": {
            "epochs": 4,
            "batch_size": 16,
            "learning_rate": 1.0,
            "clip_bound": math.inf,
            "dp": {"enabled": False, "epsilon": 1.0, "delta": 1e-5},
        },
        "ac": {"epochs": 10, "batch_size": 16, "learning_rate": 0.01},
        "loss_gap": 0.5,
    },
    "chain": {
        "n_mec": 12,
        "n_cav": 24,
        "f": 1,
        "exclusion_window": 2,
        "stop_tolerance": 1e-3,
        "max_rounds": 12,
        "signature": "hash-sim",
        "latency": {"low": 1, "high": 3},
        "faults": {"drop": 0.0, "duplicate": 0.0},
        "malicious": {"fraction": 0.0, "behavior": "sign_flip"},
        "defenses": {"scoring": True, "valup": True, "exclusion": True, "tx_valup": False},
    },
    "datasets": {"flow_csv": None, "packets_csv": None, "label_column": "label", "class_map": {}},
    "packet_generator": {
        "classes": [
            {
                "name": "benign",
                "label": "benign",
                "flows": 160,
                "duration": 30.0,
                "mean_iat": 1.0,
                "burstiness": 0.0,
                "length_mean": 500.0,
                "length_std": 80.0,
            },
            {
                "name": "flood",
                "label": 0,
                "flows": 160,
                "duration": 30.0,
                "mean_iat": 0.35,
                "burstiness": 8.0,
                "length_mean": 520.0,
                "length_std": 80.0,
            },
        ]
    },
    "tw_sweep": {"windows": ["1", "10", "default"]},
    "dp_sweep": {"epsilons": ["none", 1.0, 0.01], "seeds": 5, "clip_bound": 1.0},
    "poison": {"fractions": [0.3, 0.5]},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def _coerce_inf(value):
    if isinstance(value, str) and value.lower() in ("inf", "infinity", ".inf"):
        return math.inf
    return value


@dataclass
class RunConfig:
    tree: dict

    def __getitem__(self, key):
        return self.tree[key]

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def section(self, *path):
        node = self.tree
        for key in path:
            node = node[key]
        return node

    def fingerprint(self) -> str:
        clean = canonical_json(_jsonable(self.tree))
        return sha256_hex(clean.encode())

    def to_dict(self) -> dict:
        return _jsonable(self.tree)


def _jsonable(node):
    if isinstance(node, dict):
        return {str(k): _jsonable(v) for k, v in sorted(node.items(), key=lambda kv: str(kv[0]))}
    if isinstance(node, (list, tuple)):
        return [_jsonable(v) for v in node]
    if isinstance(node, float) and math.isinf(node):
        return "inf"
    return node


def _validate(tree: dict) -> None:
    if tree["config_version"] != CONFIG_VERSION:
        raise ConfigError(
            f"config_version {tree['config_version']} unsupported (expected {CONFIG_VERSION})"
        )
    if tree["features"]["dim"] <= 0:
        raise ConfigError("features.dim must be > 0")
    if tree["normalization"] not in ("minmax", "zscore"):
        raise ConfigError("normalization must be one of: minmax, zscore")
    splits = tree["splits"]
    total = splits["train"] + splits["val"] + splits["test"]
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"splits must sum to 1.0, got {total}")
    if tree["partition"]["mode"] not in ("iid", "dirichlet"):
        raise ConfigError("partition.mode must be iid or dirichlet")
    dp = tree["federated"]["ad"]["dp"]
    if dp["epsilon"] <= 0 or not 0 < dp["delta"] < 1:
        raise ConfigError("federated.ad.dp needs epsilon > 0 and delta in (0,1)")
    chain = tree["chain"]
    if chain["f"] < 1:
        raise ConfigError("chain.f must be >= 1")
    if not 0 <= chain["malicious"]["fraction"] <= 1:
        raise ConfigError("chain.malicious.fraction must lie in [0,1]")
    for cls in tree["generator"]["classes"]:
        for needed in ("name", "label", "count", "mean", "scale"):
            if needed not in cls:
                raise ConfigError(f"generator class {cls.get('name', '?')!r} missing {needed!r}")


def default_config() -> RunConfig:
    return RunConfig(_deep_copy(DEFAULTS))


def _deep_copy(node):
    if isinstance(node, dict):
        return {k: _deep_copy(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_deep_copy(v) for v in node]
    return node


def config_from_dict(overrides: dict) -> RunConfig:
    tree = _merge(DEFAULTS, overrides or {})
    tree["federated"]["ad"]["clip_bound"] = _coerce_inf(tree["federated"]["ad"]["clip_bound"])
    tree["federated"]["loss_gap"] = _coerce_inf(tree["federated"]["loss_gap"])
    _validate(tree)
    return RunConfig(_deep_copy(tree))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return config_from_dict(raw)


def generator_label(raw_label) -> int:
    """Config labels: 'benign' or a non-negative attack class id."""
    if isinstance(raw_label, str):
        if raw_label.lower() == "benign":
            return BENIGN
        raise ConfigError(f"unknown label {raw_label!r} (use 'benign' or an integer id)")
    label = int(raw_label)
    if label < 0:
        raise ConfigError("attack class ids must be >= 0")
    return label
