import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shrinkattn import oracles
from shrinkattn.errors import DimensionError, DomainError, NoCheckableCoordinates
from shrinkattn.tensor import (
    LinearParams,
    Tensor,
    abs_,
    add,
    avg_pool_2d,
    dumps_tensor,
    grad_check,
    linear,
    loads_tensor,
    matmul,
    reduce_mean,
    relu,
    scale,
    sigmoid,
    sign,
    soft_threshold,
    softmax_rows,
    tensor,
    vjp,
)
from shrinkattn.verify import GRAD_H, GRAD_TOL, KINK_DELTA, primitive_cases


def matrices(max_side=6, elements=st.floats(-50, 50)):
    shape = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=elements))


class TestTensor:
    def test_shape_and_flat_data(self):
        t = tensor([[1, 2, 3], [4, 5, 6]])
        assert t.shape == (2, 3)
        assert t.data.tolist() == [1, 2, 3, 4, 5, 6]

    def test_flat_constructor_checks_length(self):
        with pytest.raises(DimensionError):
            tensor([1, 2, 3], shape=(2, 2))

    def test_rejects_empty_extent(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0, 3)))

    def test_values_are_immutable(self):
        src = np.ones((2, 2))
        t = Tensor(src)
        src[0, 0] = 5.0
        assert t.value[0, 0] == 1.0
        with pytest.raises(ValueError):
            t.value[0, 0] = 3.0


class TestMatmul:
    def test_identity(self, rng):
        a = Tensor(rng.standard_normal((2, 2)))
        assert matmul(Tensor(np.eye(2)), a) == a

    def test_annihilator(self, rng):
        out = matmul(Tensor(np.zeros((2, 3))), Tensor(rng.standard_normal((3, 4))))
        assert out == Tensor(np.zeros((2, 4)))

    def test_hand_product(self):
        assert matmul(tensor([[1, 2], [3, 4]]), tensor([[5, 6], [7, 8]])).tolist() == [[19, 22], [43, 50]]

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_bit_deterministic(self, rng):
        a, b = Tensor(rng.standard_normal((17, 9))), Tensor(rng.standard_normal((9, 13)))
        first = matmul(a, b)
        assert all(matmul(a, b) == first for _ in range(5))

    def test_vjp_matches_finite_differences(self, rng):
        b = Tensor(rng.standard_normal((3, 3)))
        err = grad_check(lambda a: matmul(a, b), Tensor(rng.standard_normal((3, 3))), h=1e-6)
        assert err < 1e-7


class TestSoftmaxRows:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(tensor([[0, 0, 0]])).value, [[1 / 3] * 3], rtol=0, atol=1e-16)

    def test_analytic(self):
        np.testing.assert_allclose(softmax_rows(tensor([[0, math.log(2)]])).value, [[1 / 3, 2 / 3]], atol=1e-15)

    def test_stabilized(self):
        out = softmax_rows(tensor([[1000, 0]])).value
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_vjp_at_uniform_with_ones_is_zero(self):
        (g,) = vjp(softmax_rows, [tensor([[0.0, 0.0, 0.0]])], np.ones((1, 3)))
        np.testing.assert_allclose(g.value, 0.0, atol=1e-16)

    @given(matrices())
    def test_rows_on_simplex(self, x):
        y = softmax_rows(Tensor(x)).value
        assert np.all((y >= 0) & (y <= 1))
        np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_grad_check(self, rng):
        assert grad_check(softmax_rows, Tensor(rng.standard_normal((4, 5))), h=1e-6) < 1e-6


class TestAvgPool:
    def test_constant_input_any_kernel(self):
        x = Tensor(np.full((5, 4, 2), 0.1))
        for kernel, pad in [(1, 0), (2, 1), (3, 1), (3, 2), (4, 3)]:
            assert np.all(avg_pool_2d(x, kernel, 1, pad).value == 0.1)

    def test_unit_kernel_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 5, 2)))
        assert avg_pool_2d(x, 1, 1, 0) == x

    def test_2x2_example_against_window_enumeration(self):
        grid = [[[1], [2]], [[3], [4]]]
        expected = oracles.window_mean_pool(grid, 3, 1, 1)
        assert [[float(c[0]) for c in row] for row in expected] == [[2.5, 2.5], [2.5, 2.5]]
        out = avg_pool_2d(Tensor(np.array(grid, dtype=float)), 3, 1, 1)
        assert out.value[:, :, 0].tolist() == [[2.5, 2.5], [2.5, 2.5]]

    @given(
        st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.data()
    )
    def test_matches_enumeration_oracle(self, h, w, c, kernel, stride, data):
        pad = data.draw(st.integers(0, kernel - 1))
        if kernel > h + 2 * pad or kernel > w + 2 * pad:
            return
        grid = data.draw(arrays(np.int64, (h, w, c), elements=st.integers(-20, 20)))
        got = avg_pool_2d(Tensor(grid.astype(float)), kernel, stride, pad).value
        want = np.array(oracles.window_mean_pool(grid.tolist(), kernel, stride, pad), dtype=float)
        np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-14)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            avg_pool_2d(Tensor(np.ones((2, 2, 1))), 5, 1, 1)

    def test_bad_kernel(self):
        with pytest.raises(DomainError):
            avg_pool_2d(Tensor(np.ones((2, 2, 1))), 0, 1, 0)


class TestLinear:
    def test_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert linear(x, LinearParams.identity(4)) == x

    def test_zero_weight_gives_bias(self):
        p = LinearParams(Tensor(np.zeros((2, 3))), tensor([1, 2, 3]))
        assert linear(Tensor(np.ones((4, 2))), p).tolist() == [[1, 2, 3]] * 4

    def test_hand_example(self):
        p = LinearParams(tensor([[1, 0], [0, 2]]), tensor([1, 1]))
        assert linear(tensor([[1, 2]]), p).tolist() == [[2, 5]]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            linear(Tensor(np.ones((2, 3))), LinearParams.identity(2))

    def test_input_cotangent_is_transposed_weight(self, rng):
        w = rng.standard_normal((3, 2))
        p = LinearParams(Tensor(w), Tensor(np.zeros(2)))
        g = rng.standard_normal((1, 2))
        (gx,) = vjp(lambda x: linear(x, p), [Tensor(rng.standard_normal((1, 3)))], g)
        np.testing.assert_allclose(gx.value, g @ w.T, rtol=1e-15)


class TestElementwise:
    def test_sigmoid_zero(self):
        assert sigmoid(tensor([0.0])).tolist() == [0.5]

    def test_sigmoid_no_overflow(self):
        out = sigmoid(tensor([-800.0, 800.0])).value
        assert out.tolist() == [0.0, 1.0]

    def test_sign(self):
        assert sign(tensor([-3.2, 0.0, 4.0])).tolist() == [-1.0, 0.0, 1.0]

    def test_abs(self):
        assert abs_(tensor([-1, 2])).tolist() == [1, 2]

    def test_relu(self):
        assert relu(tensor([-1, 0, 2])).tolist() == [0, 0, 2]

    def test_scale(self):
        assert scale(tensor([1, -2]), 3).tolist() == [3, -6]

    def test_add_broadcasts_leading_axis(self):
        assert add(Tensor(np.zeros((2, 2))), tensor([1, 2])).tolist() == [[1, 2], [1, 2]]

    def test_add_mismatch(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.zeros((2, 3))), tensor([1, 2]))


class TestReduceMean:
    def test_constant(self):
        assert np.all(reduce_mean(Tensor(np.full((3, 4), 7.0)), 1).value == 7.0)

    def test_simple(self):
        assert reduce_mean(tensor([[1, 3], [3, 5]]), 0).tolist() == [2, 4]
        assert reduce_mean(tensor([[1, 2, 3]]), 1).tolist() == [2]

    def test_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            reduce_mean(Tensor(np.ones((2, 2))), 2)

    @given(matrices())
    def test_axis_consistency(self, x):
        a = reduce_mean(Tensor(x), 0).value
        b = reduce_mean(Tensor(np.ascontiguousarray(x.T)), 1).value
        np.testing.assert_array_equal(a, b)


class TestSoftThresholdPrimitive:
    def test_branches(self):
        tau = tensor([1.0])
        assert soft_threshold(tensor([[2.5]]), tau).tolist() == [[1.5]]
        assert soft_threshold(tensor([[-0.5]]), tau).tolist() == [[0.0]]
        assert soft_threshold(tensor([[-3.0]]), tau).tolist() == [[-2.0]]

    def test_zero_threshold_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert soft_threshold(x, Tensor(np.zeros(4))) == x

    def test_negative_threshold(self):
        with pytest.raises(DomainError):
            soft_threshold(tensor([[1.0]]), tensor([-0.1]))

    def test_subgradient_zero_on_closed_dead_zone(self):
        (gx, gt) = vjp(soft_threshold, [tensor([[1.0, -1.0, 0.3]]), tensor([1.0, 1.0, 1.0])], np.ones((1, 3)))
        assert gx.tolist() == [[0.0, 0.0, 0.0]]
        assert gt.tolist() == [0.0, 0.0, 0.0]

    def test_grad_check_away_from_kinks(self, rng):
        tau = Tensor(rng.uniform(0.2, 1.0, 5))
        x = np.where(rng.random((4, 5)) < 0.5, tau.value + rng.uniform(0.1, 1, (4, 5)), tau.value * 0.3)
        x *= rng.choice([-1, 1], size=x.shape)
        assert grad_check(lambda t: soft_threshold(t, tau), Tensor(x), h=1e-6) < 1e-5


class TestGradCheck:
    def test_identity_is_exact(self, rng):
        assert grad_check(lambda t: t, Tensor(rng.standard_normal((3, 2)))) < 1e-9

    def test_everything_excluded(self, rng):
        with pytest.raises(NoCheckableCoordinates, match="no checkable coordinates"):
            grad_check(lambda t: t, Tensor(rng.standard_normal((2, 2))), exclude=lambda i: True)

    def test_kink_band_excludes_base_point(self):
        with pytest.raises(NoCheckableCoordinates):
            grad_check(lambda t: soft_threshold(t, tensor([1.0])), tensor([[1.0005]]), kink_delta=1e-3)

    def test_catches_a_wrong_vjp(self, rng):
        import importlib

        tmod = importlib.import_module("shrinkattn.tensor")

        def bad(x):
            return tmod._result(x.value**2, (x,), lambda g: (g,))

        assert grad_check(bad, Tensor(rng.uniform(1, 2, (3,)).reshape(1, 3))) > 0.1

    @pytest.mark.parametrize("seed", range(5))
    def test_every_primitive(self, seed):
        cases = primitive_cases(np.random.default_rng(seed))
        for name, (fn, x) in cases.items():
            assert grad_check(fn, x, h=GRAD_H, kink_delta=KINK_DELTA) <= GRAD_TOL, name


class TestTextFormat:
    def test_roundtrip_bit_exact(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)) * 1e-300)
        y = loads_tensor(dumps_tensor(x))
        assert y.shape == x.shape and np.array_equal(y.value, x.value)

    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_roundtrip_property(self, x):
        assert np.array_equal(loads_tensor(dumps_tensor(Tensor(x))).value, x)

    @pytest.mark.parametrize(
        "text",
        ['{"shape": [2], "data": [1]}', '{"shape": [1], "data": ["a"]}', '{"data": [1]}', '[1, 2]'],
    )
    def test_malformed(self, text):
        with pytest.raises(ValueError):
            loads_tensor(text)
