import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrinkattn import oracles
from shrinkattn.attention import AttentionParams, TokenSequence, st_attention_tokens, zero_shrinkage_params
from shrinkattn.encoder import (
    BranchLayer,
    EncoderConfig,
    FeatureMap,
    encoder_branch,
    encoder_forward,
    feed_forward,
    init_encoder_params,
    multi_level_aggregate,
    multi_level_patch_embed,
    pooling_positional_encoding,
    synth_features,
    upsample_nearest,
)
from shrinkattn.errors import ConfigError, DimensionError
from shrinkattn.tensor import LinearParams, Tensor
from shrinkattn.verify import grad_check_redrawing, ppe_counterexample, tiny_encoder_grad_case


def grid_seq(values: np.ndarray) -> TokenSequence:
    h, w, c = values.shape
    return TokenSequence(Tensor(values.reshape(h * w, c)), (h, w))


class TestConfig:
    def test_defaults(self):
        cfg = EncoderConfig()
        assert (cfg.embed_dim, cfg.heads, cfg.reduction, cfg.depth) == (256, 8, 4, 1)

    @pytest.mark.parametrize(
        "kwargs", [dict(embed_dim=10, heads=4), dict(embed_dim=8, heads=2, reduction=3), dict(depth=0), dict(ppe_kernel=2)]
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            EncoderConfig(**kwargs)


class TestSynthFeatures:
    def test_deterministic(self):
        a, b = synth_features(0), synth_features(0)
        assert all(x.tensor == y.tensor for x, y in zip(a, b))

    def test_halving_shapes(self):
        maps = synth_features(1, (8, 8), (4, 8, 16))
        assert [m.tensor.shape for m in maps] == [(8, 8, 4), (4, 4, 8), (2, 2, 16)]

    def test_odd_extents_round_up(self):
        maps = synth_features(1, (7, 5), (1, 1, 1))
        assert [m.grid for m in maps] == [(7, 5), (4, 3), (2, 2)]

    def test_generator_range(self):
        for m in synth_features(3, (8, 8), (4, 4, 4)):
            assert np.all(np.abs(m.tensor.value) < 1)
            assert -1 < m.tensor.value.mean() < 1

    def test_zero_extent(self):
        with pytest.raises(ConfigError):
            synth_features(0, (0, 4), (1, 1, 1))


class TestPatchEmbed:
    def test_identity_flattens_row_major(self):
        f = FeatureMap(3, Tensor(np.array([[[1.0], [2.0]], [[3.0], [4.0]]])))
        m = multi_level_patch_embed(f, LinearParams.identity(1))
        assert m.tokens.tolist() == [[1], [2], [3], [4]] and m.grid == (2, 2)

    def test_zero_weights_give_bias(self, rng):
        f = FeatureMap(4, Tensor(rng.standard_normal((2, 3, 2))))
        embed = LinearParams(Tensor(np.zeros((2, 3))), Tensor(np.array([1.0, -1.0, 2.0])))
        assert np.all(multi_level_patch_embed(f, embed).tokens.value == [1.0, -1.0, 2.0])

    def test_channel_mismatch(self, rng):
        with pytest.raises(ConfigError):
            multi_level_patch_embed(FeatureMap(3, Tensor(np.ones((2, 2, 3)))), LinearParams.identity(2))


class TestPPE:
    def test_2x2_hand_case(self):
        grid = [[[1], [2]], [[3], [4]]]
        pooled = np.array(oracles.window_mean_pool(grid, 3, 1, 1), dtype=float)
        expected = (pooled + np.array(grid, dtype=float)).reshape(4, 1)
        out = pooling_positional_encoding(grid_seq(np.array(grid, dtype=float))).tokens.value
        assert out.ravel().tolist() == [3.5, 4.5, 5.5, 6.5]
        assert np.array_equal(out, expected)

    def test_zero(self):
        assert np.all(pooling_positional_encoding(grid_seq(np.zeros((3, 4, 2)))).tokens.value == 0)

    @given(st.integers(1, 16), st.integers(1, 16), st.floats(-1e6, 1e6, allow_subnormal=False))
    def test_constant_law_exact(self, h, w, c):
        out = pooling_positional_encoding(grid_seq(np.full((h, w, 2), c))).tokens.value
        assert np.all(out == 2 * c)

    def test_not_permutation_equivariant(self):
        m = grid_seq(np.arange(9.0).reshape(3, 3, 1))
        perm = np.array([4, 1, 2, 3, 0, 5, 6, 7, 8])  # swap a corner with the centre
        a = pooling_positional_encoding(TokenSequence(Tensor(m.tokens.value[perm]), m.grid)).tokens.value
        b = pooling_positional_encoding(m).tokens.value[perm]
        assert not np.array_equal(a, b)

    def test_random_counterexamples_exist(self, rng):
        assert all(ppe_counterexample(rng, 3, 3) is not None for _ in range(10))

    def test_grid_mismatch(self):
        with pytest.raises(DimensionError):
            TokenSequence(Tensor(np.ones((5, 2))), (2, 2))

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_window_oracle(self, seed):
        rng = np.random.default_rng(seed)
        h, w = (int(v) for v in rng.integers(1, 7, size=2))
        grid = rng.integers(-9, 10, size=(h, w, 2))
        expected = np.array(oracles.window_mean_pool(grid.tolist(), 3, 1, 1), dtype=float) + grid
        out = pooling_positional_encoding(grid_seq(grid.astype(float))).tokens.value
        np.testing.assert_allclose(out, expected.reshape(h * w, 2), rtol=1e-14, atol=1e-14)


def shortcut_layer(c):
    """Zero queries, identity values, zero FFN."""
    attn = AttentionParams(LinearParams.zeros(c, c), LinearParams.identity(c), LinearParams.identity(c), 1)
    return BranchLayer(attn, (zero_shrinkage_params(c, 1),), LinearParams.zeros(c, 4 * c), LinearParams.zeros(4 * c, c))


class TestBranch:
    def test_shortcut_only_path_returns_ppe(self, rng):
        m = grid_seq(rng.standard_normal((3, 3, 4)))
        out = encoder_branch(m, [shortcut_layer(4)])
        assert out.tokens == pooling_positional_encoding(m).tokens

    def test_shape_preserved(self, rng):
        params = init_encoder_params(0, (2, 2, 2), EncoderConfig(embed_dim=8, heads=2, reduction=2, depth=2))
        m = grid_seq(rng.standard_normal((3, 5, 8)))
        out = encoder_branch(m, params.branches[0].layers)
        assert out.tokens.shape == (15, 8) and out.grid == (3, 5)

    def test_equals_manual_composition(self, rng):
        params = init_encoder_params(1, (2, 2, 2), EncoderConfig(embed_dim=4, heads=1, reduction=2))
        layer = params.branches[0].layers[0]
        m = grid_seq(rng.standard_normal((2, 3, 4)))
        x = pooling_positional_encoding(m).tokens
        y = st_attention_tokens(x, layer.attention, layer.shrink)
        manual = feed_forward(y, layer.ffn1, layer.ffn2)
        assert encoder_branch(m, [layer]).tokens == manual


class TestAggregate:
    def setup_method(self):
        self.lat = [LinearParams.identity(2)] * 3

    def test_zero_upper_levels(self, rng):
        b3 = grid_seq(rng.standard_normal((4, 4, 2)))
        b4, b5 = grid_seq(np.zeros((2, 2, 2))), grid_seq(np.zeros((1, 1, 2)))
        o3, _, _ = multi_level_aggregate(b3, b4, b5, self.lat)
        assert o3.tokens == b3.tokens

    def test_constant_top_level_spreads(self):
        b3, b4 = grid_seq(np.zeros((4, 4, 2))), grid_seq(np.zeros((2, 2, 2)))
        b5 = grid_seq(np.full((1, 1, 2), 0.7))
        o3, o4, o5 = multi_level_aggregate(b3, b4, b5, self.lat)
        assert np.all(o4.tokens.value == 0.7) and np.all(o3.tokens.value == 0.7)
        assert [o.n for o in (o3, o4, o5)] == [16, 4, 1]

    def test_upsample_replicates_blocks(self):
        src = grid_seq(np.array([[[1.0], [2.0]], [[3.0], [4.0]]]))
        up = upsample_nearest(src, (4, 4)).tokens.value.reshape(4, 4)
        assert up.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]

    def test_grid_relation_violated(self):
        with pytest.raises(DimensionError):
            multi_level_aggregate(
                grid_seq(np.zeros((4, 4, 2))), grid_seq(np.zeros((3, 3, 2))), grid_seq(np.zeros((1, 1, 2))), self.lat
            )


class TestForward:
    cfg = EncoderConfig(embed_dim=16, heads=1, reduction=4)

    def test_shapes(self):
        feats = synth_features(0, (8, 8), (4, 8, 16))
        outs = encoder_forward(feats, init_encoder_params(0, (4, 8, 16), self.cfg))
        assert [o.tokens.shape for o in outs] == [(64, 16), (16, 16), (4, 16)]

    def test_deterministic(self):
        feats = synth_features(2, (4, 6), (3, 3, 3))
        p = init_encoder_params(5, (3, 3, 3), self.cfg)
        a, b = encoder_forward(feats, p), encoder_forward(feats, p)
        assert all(x.tokens == y.tokens for x, y in zip(a, b))

    def test_branch_independence(self):
        feats = synth_features(2, (4, 4), (3, 3, 3))
        p = init_encoder_params(5, (3, 3, 3), self.cfg)
        zeroed = (feats[0], FeatureMap(4, Tensor(np.zeros(feats[1].tensor.shape))), feats[2])
        t1, t2 = {}, {}
        encoder_forward(feats, p, t1)
        encoder_forward(zeroed, p, t2)
        same = [a.tokens == b.tokens for a, b in zip(t1["branches"], t2["branches"])]
        assert same == [True, False, True]

    def test_level_order_enforced(self):
        feats = synth_features(0, (4, 4), (2, 2, 2))
        with pytest.raises(ConfigError):
            encoder_forward(feats[::-1], init_encoder_params(0, (2, 2, 2), self.cfg))

    def test_mismatched_widths_rejected(self):
        a = init_encoder_params(0, (2, 2, 2), self.cfg)
        b = init_encoder_params(0, (2, 2, 2), EncoderConfig(embed_dim=8, heads=1, reduction=4))
        with pytest.raises(ConfigError):
            type(a)((a.branches[0], a.branches[1], b.branches[2]), a.laterals, a.config)

    @pytest.mark.parametrize("seed", range(3))
    def test_tiny_encoder_gradient(self, seed):
        err, _ = grad_check_redrawing(tiny_encoder_grad_case, np.random.default_rng(seed))
        assert err <= 1e-5
