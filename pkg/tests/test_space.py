import numpy as np
import pytest

from gnnco.supernet import (
    LayerSpace,
    SubnetSpec,
    SupernetSpace,
    sample_uniform,
    subnet_count,
)


def full_layer_count():
    return 7 * 4 * 9 * 7 * 6 * 3


class TestSubnetCount:
    def test_one_full_layer(self):
        space = SupernetSpace.standard(1, 7, final_layer_fixed=False)
        assert subnet_count(space) == 31752
        assert subnet_count(space) == full_layer_count()

    def test_two_full_layers(self):
        space = SupernetSpace.standard(2, 7, final_layer_fixed=False)
        assert subnet_count(space) == 31752 ** 2
        assert subnet_count(space) == 1_008_189_504

    def test_singletons(self):
        layer = LayerSpace(
            attention_types=("gcn",), aggregation_types=("sum",),
            activation_types=("relu",), hidden_dims=(8,),
            attention_heads=(1,), sampling_rates=(1.0,),
        )
        space = SupernetSpace(layers=(layer,), final_layer_fixed=False)
        assert subnet_count(space) == 1

    def test_final_layer_fixing_shrinks_count(self):
        space = SupernetSpace.standard(2, 7, final_layer_fixed=True)
        assert subnet_count(space) == 31752 * (7 * 4 * 1 * 1 * 6 * 3)


class TestSampleUniform:
    def test_singleton_space(self):
        layer = LayerSpace(
            attention_types=("gat",), aggregation_types=("mean",),
            activation_types=("tanh",), hidden_dims=(16,),
            attention_heads=(2,), sampling_rates=(0.5,),
        )
        space = SupernetSpace(layers=(layer,), final_layer_fixed=False)
        spec = sample_uniform(space, np.random.default_rng(0))
        c = spec.layers[0]
        assert (c.attention, c.aggregation, c.activation) == \
            ("gat", "mean", "tanh")
        assert (c.hidden_dim, c.heads, c.sampling_rate) == (16, 2, 0.5)

    def test_three_option_frequencies(self):
        space = SupernetSpace.standard(1, 7, final_layer_fixed=False)
        rng = np.random.default_rng(42)
        counts = {r: 0 for r in (0.1, 0.5, 1.0)}
        n = 100_000
        for _ in range(n):
            counts[sample_uniform(space, rng).layers[0].sampling_rate] += 1
        for rate, c in counts.items():
            assert abs(c / n - 1 / 3) < 0.01, (rate, c)

    def test_fixed_seed_reproducible(self):
        space = SupernetSpace.standard(2, 7)
        a = sample_uniform(space, np.random.default_rng(123))
        b = sample_uniform(space, np.random.default_rng(123))
        assert a == b

    def test_samples_stay_in_space(self):
        space = SupernetSpace.standard(2, 7)
        rng = np.random.default_rng(5)
        for _ in range(200):
            assert space.contains(sample_uniform(space, rng))


class TestSpaceDefinition:
    def test_final_layer_fixed_pins_lists(self):
        space = SupernetSpace.standard(3, 5, final_layer_fixed=True)
        last = space.layers[-1]
        assert last.hidden_dims == (5,)
        assert len(last.activation_types) == 1

    def test_final_layer_fixed_requires_singletons(self):
        with pytest.raises(ValueError):
            SupernetSpace(layers=(LayerSpace(),), final_layer_fixed=True)

    def test_empty_option_list_rejected(self):
        with pytest.raises(ValueError):
            SupernetSpace(layers=(LayerSpace(hidden_dims=()),),
                          final_layer_fixed=False)

    def test_fingerprint_sensitivity(self):
        a = SupernetSpace.standard(2, 7)
        b = SupernetSpace.standard(2, 7)
        c = SupernetSpace.standard(2, 7, hidden_dims=(4, 8))
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_subnet_spec_json_roundtrip(self):
        space = SupernetSpace.standard(2, 7)
        spec = sample_uniform(space, np.random.default_rng(9))
        again = SubnetSpec.from_json_dict(spec.to_json_dict())
        assert again == spec
