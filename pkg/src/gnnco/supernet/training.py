"""Supernet pre-training, subnetwork evaluation, and from-scratch fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DivergedError, EmptyMaskError
from ..graph import Graph
from .network import GraphTensors, backward, cross_entropy, forward
from .space import LayerSpace, SubnetSpec, SupernetSpace, sample_uniform
from .weights import SharedWeights


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 1000
    l2_coefficient: float = 5e-4
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


def loss(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Cross entropy over the masked nodes (L2 is added by the training step)."""
    return cross_entropy(probs, labels, mask)


def train_step(subnet: SubnetSpec, weights: SharedWeights, gt: GraphTensors,
               cfg: TrainConfig, rng: np.random.Generator,
               mask: np.ndarray) -> float:
    """One full-batch gradient step on the slices the subnetwork touches."""
    probs, caches = forward(subnet, weights, gt, rng=rng, training=True,
                            dropout_rate=cfg.dropout_rate, need_cache=True)
    data_loss = cross_entropy(probs, gt.labels, mask)
    grads = backward(subnet, weights, gt, caches, mask,
                     dropout_rate=cfg.dropout_rate)

    penalty = 0.0
    touched = weights.touched_slices(subnet)
    for name, idx in touched:
        sl = weights.tensors[name][idx]
        penalty += 0.5 * cfg.l2_coefficient * float((sl * sl).sum())
    total = data_loss + penalty
    if not np.isfinite(total):
        raise DivergedError(f"non-finite training loss: {total}")

    for name, idx in touched:
        sl = weights.tensors[name][idx]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(sl)
        g = g + cfg.l2_coefficient * sl
        weights.adam_step(name, idx, g, cfg.learning_rate)
    return total


def pretrain(space: SupernetSpace, weights: SharedWeights, gt: GraphTensors,
             cfg: TrainConfig, rng: np.random.Generator,
             mask: np.ndarray) -> list[float]:
    """One-shot pre-training: each epoch trains one uniformly sampled subnet."""
    losses = []
    for _ in range(cfg.epochs):
        subnet = sample_uniform(space, rng)
        losses.append(train_step(subnet, weights, gt, cfg, rng, mask))
    return losses


def evaluate(subnet: SubnetSpec, weights: SharedWeights, gt: GraphTensors,
             mask: np.ndarray) -> float:
    """Deterministic argmax accuracy over ``mask`` (dropout off, fixed
    sampling seed)."""
    if len(mask) == 0:
        raise EmptyMaskError("evaluate needs a non-empty node mask")
    probs = forward(subnet, weights, gt, training=False)
    pred = probs[mask].argmax(axis=1)
    return float((pred == gt.labels[mask]).mean())


def singleton_space(subnet: SubnetSpec) -> SupernetSpace:
    """A degenerate space containing exactly one subnetwork."""
    layers = tuple(
        LayerSpace(
            attention_types=(c.attention,),
            aggregation_types=(c.aggregation,),
            activation_types=(c.activation,),
            hidden_dims=(c.hidden_dim,),
            attention_heads=(c.heads,),
            sampling_rates=(c.sampling_rate,),
        )
        for c in subnet.layers
    )
    return SupernetSpace(layers=layers, final_layer_fixed=False)


def finetune(subnet: SubnetSpec, g: Graph, cfg: TrainConfig | None = None,
             epochs: int = 400) -> tuple[SharedWeights, float]:
    """Train the single subnetwork from scratch and report test accuracy."""
    cfg = cfg or TrainConfig()
    if epochs != cfg.epochs:
        cfg = replace(cfg, epochs=epochs)
    gt = GraphTensors.from_graph(g)
    space = singleton_space(subnet)
    weights = SharedWeights.initialize(space, gt.x0.shape[1], gt.num_classes,
                                       seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        train_step(subnet, weights, gt, cfg, rng, g.splits.train_mask)
    test_mask = g.splits.test_mask
    acc = evaluate(subnet, weights, gt,
                   test_mask if len(test_mask) else g.splits.train_mask)
    return weights, acc
