"""The GNN block search space and subnetwork sampling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

ATTENTION_TYPES = ("skip", "gcn", "gat", "gat_sym", "cos", "linear", "gene_linear")
AGGREGATION_TYPES = ("sum", "mean", "max", "mlp")
ACTIVATION_TYPES = (
    "skip", "sigmoid", "tanh", "relu", "linear", "softplus",
    "leaky_relu", "relu6", "elu",
)
HIDDEN_DIMS = (4, 8, 16, 32, 64, 128, 256)
ATTENTION_HEADS = (1, 2, 4, 6, 8, 16)
SAMPLING_RATES = (0.1, 0.5, 1.0)

# attention options that carry learned score parameters (and an edge prepass)
PARAMETRIC_ATTENTION = ("gat", "gat_sym", "cos", "linear", "gene_linear")

_ATTR_NAMES = ("attention", "aggregation", "activation", "hidden_dim", "heads",
               "sampling_rate")


@dataclass(frozen=True)
class LayerSpace:
    """Option lists for one supernet layer."""

    attention_types: tuple = ATTENTION_TYPES
    aggregation_types: tuple = AGGREGATION_TYPES
    activation_types: tuple = ACTIVATION_TYPES
    hidden_dims: tuple = HIDDEN_DIMS
    attention_heads: tuple = ATTENTION_HEADS
    sampling_rates: tuple = SAMPLING_RATES

    def option_lists(self) -> tuple:
        return (self.attention_types, self.aggregation_types,
                self.activation_types, self.hidden_dims,
                self.attention_heads, self.sampling_rates)

    def validate(self) -> None:
        for name, options in zip(_ATTR_NAMES, self.option_lists()):
            if not options:
                raise ValueError(f"empty option list for {name}")


@dataclass(frozen=True)
class LayerChoice:
    """One concrete pick per block attribute of a layer."""

    attention: str
    aggregation: str
    activation: str
    hidden_dim: int
    heads: int
    sampling_rate: float

    def as_tuple(self) -> tuple:
        return (self.attention, self.aggregation, self.activation,
                self.hidden_dim, self.heads, self.sampling_rate)


@dataclass(frozen=True)
class SubnetSpec:
    """A concrete subnetwork: one LayerChoice per layer."""

    layers: tuple  # tuple[LayerChoice, ...]

    def to_json_dict(self) -> dict:
        return {"layers": [
            {"attention": c.attention, "aggregation": c.aggregation,
             "activation": c.activation, "hidden_dim": c.hidden_dim,
             "heads": c.heads, "sampling_rate": c.sampling_rate}
            for c in self.layers
        ]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "SubnetSpec":
        return cls(layers=tuple(
            LayerChoice(
                attention=str(d["attention"]),
                aggregation=str(d["aggregation"]),
                activation=str(d["activation"]),
                hidden_dim=int(d["hidden_dim"]),
                heads=int(d["heads"]),
                sampling_rate=float(d["sampling_rate"]),
            )
            for d in data["layers"]
        ))

    def key(self) -> tuple:
        return tuple(c.as_tuple() for c in self.layers)


@dataclass(frozen=True)
class SupernetSpace:
    """Per-layer option lists plus the fixed-final-layer convention."""

    layers: tuple  # tuple[LayerSpace, ...]
    final_layer_fixed: bool = True

    def __post_init__(self):
        for layer in self.layers:
            layer.validate()
        if self.final_layer_fixed and self.layers:
            last = self.layers[-1]
            if len(last.hidden_dims) != 1 or len(last.activation_types) != 1:
                raise ValueError(
                    "final_layer_fixed requires singleton hidden/activation "
                    "lists on the last layer"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def standard(cls, num_layers: int, num_classes: int,
                 final_layer_fixed: bool = True, **overrides) -> "SupernetSpace":
        """Full option lists on every layer; the last layer's hidden dim and
        activation are pinned to the dataset when ``final_layer_fixed``."""
        layers = []
        for i in range(num_layers):
            kw = dict(overrides)
            if final_layer_fixed and i == num_layers - 1:
                kw["hidden_dims"] = (num_classes,)
                kw["activation_types"] = ("linear",)
            layers.append(LayerSpace(**kw))
        return cls(layers=tuple(layers), final_layer_fixed=final_layer_fixed)

    def fingerprint(self) -> str:
        payload = {
            "final_layer_fixed": self.final_layer_fixed,
            "layers": [
                [list(opts) for opts in layer.option_lists()]
                for layer in self.layers
            ],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def contains(self, spec: SubnetSpec) -> bool:
        if len(spec.layers) != self.num_layers:
            return False
        for choice, layer in zip(spec.layers, self.layers):
            for value, options in zip(choice.as_tuple(), layer.option_lists()):
                if value not in options:
                    return False
        return True


def subnet_count(space: SupernetSpace) -> int:
    """Exact number of distinct subnetworks (product of option list lengths)."""
    total = 1
    for layer in space.layers:
        for options in layer.option_lists():
            total *= len(options)
    return total


def sample_uniform(space: SupernetSpace, rng: np.random.Generator) -> SubnetSpec:
    """Draw every block attribute independently and uniformly."""
    choices = []
    for layer in space.layers:
        picks = [opts[rng.integers(len(opts))] for opts in layer.option_lists()]
        choices.append(LayerChoice(*picks))
    return SubnetSpec(layers=tuple(choices))
