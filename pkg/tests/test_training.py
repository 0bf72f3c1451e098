import copy

import numpy as np
import pytest

from gnnco.errors import CheckpointMismatchError, EmptyMaskError
from gnnco.supernet import (
    GraphTensors,
    LayerChoice,
    SharedWeights,
    SubnetSpec,
    SupernetSpace,
    TrainConfig,
    backward,
    evaluate,
    finetune,
    forward,
    pretrain,
    sample_uniform,
    singleton_space,
    train_step,
)
from gnnco.supernet.network import cross_entropy

from conftest import random_graph

GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7
FD_STEP = 1e-4


def train_loss(subnet, weights, gt, mask, dropout, rng_seed=123):
    rng = np.random.default_rng(rng_seed)
    probs = forward(subnet, weights, gt, rng=rng, training=True,
                    dropout_rate=dropout)
    return cross_entropy(probs, gt.labels, mask)


def fd_gradient(subnet, weights, gt, mask, name, idx, dropout):
    sl = weights.tensors[name][idx]
    out = np.zeros_like(np.atleast_1d(sl))
    positions = list(np.ndindex(sl.shape)) if sl.ndim else [()]
    for pos in positions:
        def poke(delta):
            if sl.ndim:
                weights.tensors[name][idx][pos] += delta
            else:
                weights.tensors[name][()] += delta
        poke(FD_STEP)
        lp = train_loss(subnet, weights, gt, mask, dropout)
        poke(-2 * FD_STEP)
        lm = train_loss(subnet, weights, gt, mask, dropout)
        poke(FD_STEP)
        val = (lp - lm) / (2 * FD_STEP)
        if sl.ndim:
            out[pos] = val
        else:
            out = np.asarray(val)
    return out


def assert_gradients_close(subnet, gt, seed, dropout=0.0):
    weights = SharedWeights.initialize(singleton_space(subnet),
                                       gt.x0.shape[1], gt.num_classes,
                                       seed=seed)
    # jitter every parameter continuously so the check runs at a generic
    # point: deterministic inits (gin eps = 0) can otherwise put max/relu
    # kinks exactly at the evaluation point, where a finite difference and
    # a one-sided subgradient legitimately disagree
    jitter = np.random.default_rng(seed + 991)
    for name, arr in weights.tensors.items():
        arr += jitter.uniform(-0.05, 0.05, size=arr.shape)
    mask = np.arange(gt.num_nodes)
    rng = np.random.default_rng(123)
    _, caches = forward(subnet, weights, gt, rng=rng, training=True,
                        dropout_rate=dropout, need_cache=True)
    grads = backward(subnet, weights, gt, caches, mask, dropout_rate=dropout)
    for name, idx in weights.touched_slices(subnet):
        analytic = grads.get(name)
        if analytic is None:
            analytic = np.zeros_like(np.atleast_1d(weights.tensors[name][idx]))
        fd = fd_gradient(subnet, weights, gt, mask, name, idx, dropout)
        err = np.abs(np.atleast_1d(analytic) - fd)
        tol = GRAD_ATOL + GRAD_RTOL * np.maximum(np.abs(np.atleast_1d(analytic)),
                                                 np.abs(fd))
        assert np.all(err <= tol), (
            f"{name}: max err {err.max():.3e} (tol {tol.min():.3e})"
        )


def random_subnet_for_gradcheck(rng):
    """Small dims keep finite differencing affordable; all blocks reachable."""
    space = SupernetSpace.standard(
        2, 3, final_layer_fixed=False,
        hidden_dims=(3, 4, 5), attention_heads=(1, 2, 3),
        sampling_rates=(0.5, 1.0),
    )
    return sample_uniform(space, rng)


class TestGradients:
    def test_twenty_random_subnets(self):
        rng = np.random.default_rng(2024)
        for trial in range(20):
            subnet = random_subnet_for_gradcheck(rng)
            g = random_graph(n=10, f=5, c=3, seed=trial)
            gt = GraphTensors.from_graph(g)
            assert_gradients_close(subnet, gt, seed=trial)

    def test_gradients_with_dropout(self):
        subnet = SubnetSpec(layers=(
            LayerChoice("gat", "sum", "relu", 4, 2, 1.0),
            LayerChoice("gcn", "mean", "linear", 3, 1, 1.0),
        ))
        g = random_graph(n=10, f=5, c=3, seed=77)
        gt = GraphTensors.from_graph(g)
        assert_gradients_close(subnet, gt, seed=77, dropout=0.3)


class TestTrainStep:
    def _setup(self, seed=0):
        subnet = SubnetSpec(layers=(
            LayerChoice("gat", "sum", "relu", 4, 2, 1.0),
            LayerChoice("gcn", "sum", "linear", 3, 1, 1.0),
        ))
        g = random_graph(n=12, f=6, c=3, seed=seed)
        gt = GraphTensors.from_graph(g)
        space = SupernetSpace.standard(
            2, 3, final_layer_fixed=False, hidden_dims=(4, 8),
            attention_heads=(1, 2), sampling_rates=(1.0,),
        )
        weights = SharedWeights.initialize(space, 6, 3, seed=seed)
        return subnet, g, gt, space, weights

    def test_zero_learning_rate_rejected_but_tiny_ok(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)

    def test_adam_step_zero_lr_keeps_weights(self):
        # the optimizer itself: zero step size leaves weights bit identical
        subnet, g, gt, space, weights = self._setup()
        name, idx = weights.touched_slices(subnet)[0]
        before = weights.tensors[name].copy()
        grad = np.ones_like(weights.tensors[name][idx])
        weights.adam_step(name, idx, grad, lr=0.0)
        assert np.array_equal(weights.tensors[name], before)
        assert weights.adam_t[name][idx].min() == 1  # state did advance

    def test_tiny_learning_rate_leaves_weights_untouched(self):
        subnet, g, gt, space, weights = self._setup()
        before = {k: v.copy() for k, v in weights.tensors.items()}
        cfg = TrainConfig(learning_rate=1e-300, epochs=1, l2_coefficient=0.0,
                          dropout_rate=0.0)
        train_step(subnet, weights, gt, cfg, np.random.default_rng(0),
                   np.arange(g.num_nodes))
        for k in before:
            np.testing.assert_allclose(weights.tensors[k], before[k],
                                       atol=1e-290)

    def test_untouched_slices_bit_identical(self):
        subnet, g, gt, space, weights = self._setup(seed=5)
        before = {k: v.copy() for k, v in weights.tensors.items()}
        m_before = {k: v.copy() for k, v in weights.adam_m.items()}
        cfg = TrainConfig(epochs=1, dropout_rate=0.5)
        train_step(subnet, weights, gt, cfg, np.random.default_rng(1),
                   np.arange(g.num_nodes))
        touched = {name: idx for name, idx in weights.touched_slices(subnet)}
        for name, arr in weights.tensors.items():
            mask = np.ones(arr.shape, dtype=bool)
            if name in touched:
                mask[touched[name]] = False
            # everything outside the touched slice is bit identical
            assert np.array_equal(arr[mask], before[name][mask])
            assert np.array_equal(weights.adam_m[name][mask],
                                  m_before[name][mask])
        # and the touched combination slice did change
        assert not np.array_equal(
            weights.tensors["l0.comb"][touched["l0.comb"]],
            before["l0.comb"][touched["l0.comb"]],
        )

    def test_hidden4_leaves_high_columns_untouched(self):
        subnet, g, gt, space, weights = self._setup(seed=9)
        before = weights.tensors["l0.comb"].copy()
        cfg = TrainConfig(epochs=1, dropout_rate=0.0)
        for _ in range(3):
            train_step(subnet, weights, gt, cfg, np.random.default_rng(2),
                       np.arange(g.num_nodes))
        # columns beyond hidden_dim 4 of layer 0 stay bit identical
        assert np.array_equal(weights.tensors["l0.comb"][:, 4:],
                              before[:, 4:])


class TestPretrain:
    def test_zero_epochs_no_change(self):
        g = random_graph(n=8, f=4, c=2, seed=0)
        gt = GraphTensors.from_graph(g)
        space = SupernetSpace.standard(2, 2, hidden_dims=(4, 8),
                                       attention_heads=(1,),
                                       sampling_rates=(1.0,))
        weights = SharedWeights.initialize(space, 4, 2, seed=0)
        before = {k: v.copy() for k, v in weights.tensors.items()}
        losses = pretrain(space, weights, gt, TrainConfig(epochs=0),
                          np.random.default_rng(0), np.arange(8))
        assert losses == []
        for k in before:
            assert np.array_equal(weights.tensors[k], before[k])

    def test_singleton_space_matches_plain_training(self):
        g = random_graph(n=10, f=5, c=3, seed=3)
        gt = GraphTensors.from_graph(g)
        subnet = SubnetSpec(layers=(
            LayerChoice("gcn", "sum", "relu", 4, 1, 1.0),
            LayerChoice("skip", "sum", "linear", 3, 1, 1.0),
        ))
        space = singleton_space(subnet)
        cfg = TrainConfig(epochs=5, dropout_rate=0.5, seed=0)

        w1 = SharedWeights.initialize(space, 5, 3, seed=0)
        losses_a = pretrain(space, w1, gt, cfg, np.random.default_rng(7),
                            np.arange(10))

        w2 = SharedWeights.initialize(space, 5, 3, seed=0)
        rng = np.random.default_rng(7)
        losses_b = []
        for _ in range(5):
            spec = sample_uniform(space, rng)  # consumes the same rng draws
            assert spec == subnet
            losses_b.append(train_step(spec, w2, gt, cfg, rng, np.arange(10)))
        assert losses_a == losses_b
        for k in w1.tensors:
            assert np.array_equal(w1.tensors[k], w2.tensors[k])


class TestEvaluate:
    def _edgeless_graph(self, labels):
        """No edges: with self loops the propagation matrix is the identity,
        so the network output is softmax(X W) exactly."""
        from gnnco.graph import DatasetSplit, Graph, SparseMatrix
        n = len(labels)
        c = int(max(labels)) + 1
        x = np.eye(c)[labels] * 10.0
        adj = SparseMatrix.from_edges(n, np.array([], dtype=int),
                                      np.array([], dtype=int))
        g = Graph(num_nodes=n, num_edges=0, features=x,
                  labels=np.asarray(labels), num_classes=c, adjacency=adj,
                  splits=DatasetSplit(np.arange(n),
                                      np.array([], dtype=np.int64),
                                      np.array([], dtype=np.int64)))
        return g

    def test_one_hot_logits_score_one(self):
        labels = np.array([0, 1, 2, 1, 0])
        g = self._edgeless_graph(labels)
        gt = GraphTensors.from_graph(g)
        subnet = SubnetSpec(layers=(
            LayerChoice("skip", "sum", "linear", 3, 1, 1.0),))
        weights = SharedWeights.initialize(singleton_space(subnet), 3, 3)
        weights.tensors["l0.comb"][:] = np.eye(3)
        assert evaluate(subnet, weights, gt, np.arange(5)) == 1.0

    def test_adversarial_permutation_scores_zero(self):
        labels = np.array([0, 1, 2, 1, 0])
        g = self._edgeless_graph(labels)
        gt = GraphTensors.from_graph(g)
        subnet = SubnetSpec(layers=(
            LayerChoice("skip", "sum", "linear", 3, 1, 1.0),))
        weights = SharedWeights.initialize(singleton_space(subnet), 3, 3)
        # route every class to a different argmax
        weights.tensors["l0.comb"][:] = np.eye(3)[[1, 2, 0]]
        assert evaluate(subnet, weights, gt, np.arange(5)) == 0.0

    def test_perfect_and_worst(self):
        g = random_graph(n=6, f=3, c=3, seed=1)
        gt = GraphTensors.from_graph(g)
        subnet = SubnetSpec(layers=(LayerChoice("gcn", "sum", "linear", 3, 1, 1.0),))
        weights = SharedWeights.initialize(singleton_space(subnet), 3, 3)
        acc = evaluate(subnet, weights, gt, np.arange(6))
        assert 0.0 <= acc <= 1.0

    def test_deterministic_with_sampling(self):
        g = random_graph(n=14, f=5, c=3, seed=6)
        gt = GraphTensors.from_graph(g)
        subnet = SubnetSpec(layers=(
            LayerChoice("gat", "sum", "relu", 8, 2, 0.5),
            LayerChoice("gcn", "sum", "linear", 3, 1, 0.1),
        ))
        weights = SharedWeights.initialize(singleton_space(subnet), 5, 3,
                                           seed=2)
        a = evaluate(subnet, weights, gt, np.arange(14))
        b = evaluate(subnet, weights, gt, np.arange(14))
        assert a == b

    def test_empty_mask(self):
        g = random_graph(n=5, seed=0)
        gt = GraphTensors.from_graph(g)
        subnet = SubnetSpec(layers=(LayerChoice("gcn", "sum", "linear", 3, 1, 1.0),))
        weights = SharedWeights.initialize(singleton_space(subnet), 5, 3)
        with pytest.raises(EmptyMaskError):
            evaluate(subnet, weights, gt, np.array([], dtype=int))


class TestFinetune:
    def test_zero_epochs_random_net(self):
        g = random_graph(n=10, f=5, c=3, seed=2)
        subnet = SubnetSpec(layers=(
            LayerChoice("gcn", "sum", "relu", 4, 1, 1.0),
            LayerChoice("gcn", "sum", "linear", 3, 1, 1.0),
        ))
        _, acc = finetune(subnet, g, TrainConfig(epochs=1), epochs=0)
        assert 0.0 <= acc <= 1.0

    def test_deterministic(self):
        g = random_graph(n=10, f=5, c=3, seed=2)
        subnet = SubnetSpec(layers=(
            LayerChoice("gat", "mean", "tanh", 4, 2, 1.0),
            LayerChoice("gcn", "sum", "linear", 3, 1, 1.0),
        ))
        cfg = TrainConfig(epochs=10, seed=5)
        _, a = finetune(subnet, g, cfg, epochs=10)
        _, b = finetune(subnet, g, cfg, epochs=10)
        assert a == b


@pytest.mark.slow
def test_pretrained_supernet_beats_baseline_on_cora(cora):
    """Full-scale one-shot pre-training: after 1000 uniform-sampling epochs
    the mean validation accuracy of 50 random subnets clears the 0.25
    majority-class level. Takes several minutes; run with ``-m slow``."""
    from gnnco.supernet import SupernetSpace, pretrain, sample_uniform

    gt = GraphTensors.from_graph(cora)
    space = SupernetSpace.standard(2, cora.num_classes)
    weights = SharedWeights.initialize(space, cora.num_features,
                                       cora.num_classes, seed=0)
    rng = np.random.default_rng(0)
    pretrain(space, weights, gt, TrainConfig(epochs=1000), rng,
             cora.splits.train_mask)
    eval_rng = np.random.default_rng(1)
    accs = [evaluate(sample_uniform(space, eval_rng), weights, gt,
                     cora.splits.val_mask) for _ in range(50)]
    assert float(np.mean(accs)) > 0.25


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        space = SupernetSpace.standard(2, 3, hidden_dims=(4, 8),
                                       attention_heads=(1, 2),
                                       sampling_rates=(1.0,))
        weights = SharedWeights.initialize(space, 6, 3, seed=1)
        path = tmp_path / "ckpt.npz"
        weights.save(path)
        loaded = SharedWeights.load(path, space)
        assert set(loaded.tensors) == set(weights.tensors)
        for k in weights.tensors:
            assert np.array_equal(loaded.tensors[k], weights.tensors[k])

    def test_fingerprint_mismatch_rejected(self, tmp_path):
        space = SupernetSpace.standard(2, 3, hidden_dims=(4, 8),
                                       attention_heads=(1,),
                                       sampling_rates=(1.0,))
        other = SupernetSpace.standard(2, 3, hidden_dims=(4, 16),
                                       attention_heads=(1,),
                                       sampling_rates=(1.0,))
        weights = SharedWeights.initialize(space, 6, 3, seed=1)
        path = tmp_path / "ckpt.npz"
        weights.save(path)
        with pytest.raises(CheckpointMismatchError):
            SharedWeights.load(path, other)
