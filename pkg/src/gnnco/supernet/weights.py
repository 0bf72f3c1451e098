"""Shared supernet weights: slice addressing, Adam state, checkpoints.

Every subnetwork reads and trains only the leading slices of the shared
tensors, so training one subnetwork must leave every other slice (and its
optimizer state) bit-identical.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import CheckpointMismatchError
from .space import PARAMETRIC_ATTENTION, SubnetSpec, SupernetSpace

CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SharedWeights:
    """Named shared tensors plus per-element Adam state."""

    def __init__(self, space: SupernetSpace, in_features: int, num_classes: int,
                 tensors: dict[str, np.ndarray]):
        self.space = space
        self.in_features = in_features
        self.num_classes = num_classes
        self.tensors = tensors
        self.adam_m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.adam_t = {k: np.zeros(v.shape, dtype=np.int64)
                       for k, v in tensors.items()}

    # -- construction -----------------------------------------------------

    @classmethod
    def initialize(cls, space: SupernetSpace, in_features: int,
                   num_classes: int, seed: int = 0) -> "SharedWeights":
        rng = np.random.default_rng(seed)
        tensors: dict[str, np.ndarray] = {}
        last = len(space.layers) - 1
        for l, layer in enumerate(space.layers):
            f_max = cls.layer_in_max(space, in_features, l)
            k_max = max(layer.hidden_dims)
            if l == last:
                # the prediction layer always emits num_classes columns
                k_max = max(k_max, num_classes)
            h_max = max(layer.attention_heads)
            tensors[f"l{l}.comb"] = _glorot(rng, f_max, k_max)
            if "mlp" in layer.aggregation_types:
                tensors[f"l{l}.gin1"] = _glorot(rng, f_max, k_max)
                tensors[f"l{l}.gin2"] = _glorot(rng, k_max, f_max)
                tensors[f"l{l}.gin_eps"] = np.zeros(())
            for att in layer.attention_types:
                if att not in PARAMETRIC_ATTENTION:
                    continue
                tensors[f"l{l}.att.{att}.w1"] = _glorot_heads(rng, h_max, f_max)
                tensors[f"l{l}.att.{att}.w2"] = _glorot_heads(rng, h_max, f_max)
                if att == "gene_linear":
                    tensors[f"l{l}.att.{att}.wa"] = np.ones(h_max)
        return cls(space, in_features, num_classes, tensors)

    @staticmethod
    def layer_in_max(space: SupernetSpace, in_features: int, layer: int) -> int:
        if layer == 0:
            return in_features
        return max(space.layers[layer - 1].hidden_dims)

    # -- slice addressing --------------------------------------------------

    def touched_slices(self, subnet: SubnetSpec) -> list[tuple[str, tuple]]:
        """(tensor name, numpy index) pairs a subnetwork reads and trains."""
        out: list[tuple[str, tuple]] = []
        f_in = self.in_features
        last = len(subnet.layers) - 1
        for l, choice in enumerate(subnet.layers):
            k = choice.hidden_dim
            k_out = self.num_classes if l == last else k
            out.append((f"l{l}.comb", np.s_[:f_in, :k_out]))
            if choice.aggregation == "mlp":
                out.append((f"l{l}.gin1", np.s_[:f_in, :k]))
                out.append((f"l{l}.gin2", np.s_[:k, :f_in]))
                out.append((f"l{l}.gin_eps", ()))
            if choice.attention in PARAMETRIC_ATTENTION:
                h = choice.heads
                base = f"l{l}.att.{choice.attention}"
                out.append((f"{base}.w1", np.s_[:h, :f_in]))
                out.append((f"{base}.w2", np.s_[:h, :f_in]))
                if choice.attention == "gene_linear":
                    out.append((f"{base}.wa", np.s_[:h]))
            f_in = k
        return out

    # -- optimizer ---------------------------------------------------------

    def adam_step(self, name: str, idx, grad: np.ndarray, lr: float) -> None:
        """Apply one Adam update to a single slice; per-element step counts."""
        w = self.tensors[name]
        m, v, t = self.adam_m[name], self.adam_v[name], self.adam_t[name]
        t[idx] += 1
        m[idx] = ADAM_BETA1 * m[idx] + (1.0 - ADAM_BETA1) * grad
        v[idx] = ADAM_BETA2 * v[idx] + (1.0 - ADAM_BETA2) * grad * grad
        steps = t[idx]
        m_hat = m[idx] / (1.0 - ADAM_BETA1 ** steps)
        v_hat = v[idx] / (1.0 - ADAM_BETA2 ** steps)
        w[idx] = w[idx] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "fingerprint": self.space.fingerprint(),
            "in_features": self.in_features,
            "num_classes": self.num_classes,
        }
        arrays = {f"tensor.{k}": v for k, v in self.tensors.items()}
        np.savez_compressed(path, __meta__=json.dumps(meta, sort_keys=True),
                            **arrays)

    @classmethod
    def load(cls, path, space: SupernetSpace) -> "SharedWeights":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointMismatchError(
                    f"unsupported checkpoint version {meta.get('version')}"
                )
            if meta["fingerprint"] != space.fingerprint():
                raise CheckpointMismatchError(
                    "checkpoint was written for a different supernet space "
                    f"(fingerprint {meta['fingerprint'][:12]}... != "
                    f"{space.fingerprint()[:12]}...)"
                )
            tensors = {
                k[len("tensor."):]: np.array(data[k])
                for k in data.files if k.startswith("tensor.")
            }
        fresh = cls.initialize(space, int(meta["in_features"]),
                               int(meta["num_classes"]))
        for name, ref in fresh.tensors.items():
            if name not in tensors or tensors[name].shape != ref.shape:
                raise CheckpointMismatchError(
                    f"checkpoint tensor {name!r} missing or mis-shaped"
                )
        return cls(space, int(meta["in_features"]), int(meta["num_classes"]),
                   tensors)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _glorot_heads(rng: np.random.Generator, heads: int, fan_in: int) -> np.ndarray:
    # one F x 1 score vector per head slot
    limit = np.sqrt(6.0 / (fan_in + 1))
    return rng.uniform(-limit, limit, size=(heads, fan_in))
