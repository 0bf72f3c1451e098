"""GNN supernet: search space, shared weights, forward/backward, training."""

from .network import (
    EVAL_SAMPLING_SEED,
    GraphTensors,
    Support,
    attention_coefficients,
    backward,
    forward,
    sample_support,
)
from .space import (
    ACTIVATION_TYPES,
    AGGREGATION_TYPES,
    ATTENTION_HEADS,
    ATTENTION_TYPES,
    HIDDEN_DIMS,
    PARAMETRIC_ATTENTION,
    SAMPLING_RATES,
    LayerChoice,
    LayerSpace,
    SubnetSpec,
    SupernetSpace,
    sample_uniform,
    subnet_count,
)
from .training import (
    TrainConfig,
    evaluate,
    finetune,
    loss,
    pretrain,
    singleton_space,
    train_step,
)
from .weights import SharedWeights

__all__ = [
    "ACTIVATION_TYPES", "AGGREGATION_TYPES", "ATTENTION_HEADS",
    "ATTENTION_TYPES", "EVAL_SAMPLING_SEED", "GraphTensors", "HIDDEN_DIMS",
    "LayerChoice", "LayerSpace", "PARAMETRIC_ATTENTION", "SAMPLING_RATES",
    "SharedWeights", "SubnetSpec", "SupernetSpace", "Support", "TrainConfig",
    "attention_coefficients", "backward", "evaluate", "finetune", "forward",
    "loss", "pretrain", "sample_support", "sample_uniform", "singleton_space",
    "subnet_count", "train_step",
]
