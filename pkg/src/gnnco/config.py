"""Declarative run configuration: one JSON file, dotted-path overrides.

Every field has a default matching the reference experimental setup, so an
empty config file is a valid full experiment description.
"""

from __future__ import annotations

import copy
import json
import os

from .accel import AccelSpace, Platform
from .graph import Graph, load_json_graph, load_planetoid, make_splits
from .search import SearchParams
from .supernet import SupernetSpace, TrainConfig

SEED_ENV_VAR = "GNNCO_SEED"

DEFAULTS: dict = {
    "dataset": {
        "format": "planetoid",          # planetoid | json
        "content_path": "data/cora/cora.content",
        "cites_path": "data/cora/cora.cites",
        "json_path": "",
        "normalize_features": False,
        "split": {"train": 140, "val": 500, "test": 1000, "seed": 0},
    },
    "supernet": {
        "num_layers": 2,
        "final_layer_fixed": True,
        # optional option-list overrides, e.g. "hidden_dims": [16, 64]
    },
    "platform": {
        "total_pes": 4096,
        "clock_hz": 330e6,
        "offchip_bytes_per_sec": 460e9,
        "onchip_buffer_bytes": 42 * 2**20,
        "value_bytes": 2,
        "index_bytes": 4,
        "num_subaccs": 5,
        "startup_cycles": 1000,
    },
    "training": {
        "learning_rate": 0.001,
        "pretrain_epochs": 1000,
        "finetune_epochs": 400,
        "l2_coefficient": 5e-4,
        "dropout_rate": 0.5,
        "seed": 0,
    },
    "search": {
        "target": 1.6,
        "n_outputs": 5,
        "pool_max": 100,
        "birth_rate": 0.2,
        "max_generations": 500,
        "mutation_rate": 0.5,
        "latency_weight": None,
        "latency_ref": None,
        "n_tile_options": 10,
        "seed": 0,
        "checkpoint_every": 10,
        "workers": 1,
    },
    "output_dir": "results",
}

_SUPERNET_LIST_KEYS = (
    "attention_types", "aggregation_types", "activation_types",
    "hidden_dims", "attention_heads", "sampling_rates",
)


class ConfigError(ValueError):
    pass


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        known = key in base or (path == "supernet" and key in _SUPERNET_LIST_KEYS)
        if not known:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base.get(key), dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, here)
        else:
            _check_type(base.get(key), value, here)
            out[key] = value
    return out


def _check_type(default, value, path: str) -> None:
    if default is None or value is None:
        return
    if isinstance(default, bool) != isinstance(value, bool):
        raise ConfigError(f"{path}: expected {type(default).__name__}")
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path) as fh:
            user = json.load(fh)
        cfg = _deep_merge(cfg, user)
    for item in overrides or []:
        cfg = apply_override(cfg, item)
    seed_env = os.environ.get(SEED_ENV_VAR)
    if seed_env is not None:
        seed = int(seed_env)
        cfg["dataset"]["split"]["seed"] = seed
        cfg["training"]["seed"] = seed
        cfg["search"]["seed"] = seed
    return cfg


def apply_override(cfg: dict, item: str) -> dict:
    """Apply one ``section.key=value`` override; values parse as JSON first."""
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value: {item!r}")
    dotted, raw = item.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    leaf = node
    for k in keys[:-1]:
        leaf[k] = {}
        leaf = leaf[k]
    leaf[keys[-1]] = value
    return _deep_merge(cfg, node)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_graph(cfg: dict) -> Graph:
    ds = cfg["dataset"]
    if ds["format"] == "planetoid":
        g = load_planetoid(ds["content_path"], ds["cites_path"],
                           normalize_features=ds["normalize_features"])
    elif ds["format"] == "json":
        g = load_json_graph(ds["json_path"],
                            normalize_features=ds["normalize_features"])
    else:
        raise ConfigError(f"unknown dataset format {ds['format']!r}")
    sp = ds["split"]
    splits = make_splits(g, sp["train"], sp["val"], sp["test"],
                         seed=sp["seed"])
    return g.with_splits(splits)


def build_space(cfg: dict, num_classes: int) -> SupernetSpace:
    sn = cfg["supernet"]
    overrides = {k: tuple(v) for k, v in sn.items() if k in _SUPERNET_LIST_KEYS}
    return SupernetSpace.standard(
        int(sn["num_layers"]), num_classes,
        final_layer_fixed=bool(sn["final_layer_fixed"]), **overrides,
    )


def build_platform(cfg: dict) -> Platform:
    return Platform.from_json_dict(cfg["platform"])


def build_accel_space(cfg: dict) -> AccelSpace:
    return AccelSpace(platform=build_platform(cfg),
                      n_tile_options=int(cfg["search"]["n_tile_options"]))


def build_train_config(cfg: dict, epochs_key: str = "pretrain_epochs") -> TrainConfig:
    tr = cfg["training"]
    return TrainConfig(
        learning_rate=float(tr["learning_rate"]),
        epochs=int(tr[epochs_key]),
        l2_coefficient=float(tr["l2_coefficient"]),
        dropout_rate=float(tr["dropout_rate"]),
        seed=int(tr["seed"]),
    )


def build_search_params(cfg: dict, workers: int | None = None) -> SearchParams:
    s = cfg["search"]
    return SearchParams(
        target=float(s["target"]),
        n_outputs=int(s["n_outputs"]),
        pool_max=int(s["pool_max"]),
        birth_rate=float(s["birth_rate"]),
        max_generations=int(s["max_generations"]),
        mutation_rate=float(s["mutation_rate"]),
        latency_weight=s["latency_weight"],
        latency_ref=s["latency_ref"],
        seed=int(s["seed"]),
        checkpoint_every=int(s["checkpoint_every"]),
        workers=int(workers if workers is not None else s["workers"]),
    )
