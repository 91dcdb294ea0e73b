import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import max_rel_error, naive_conv2d, numerical_grad
from srforge.tensor import (
    ConvSpec,
    NonFiniteError,
    ShapeError,
    add,
    as_tensor,
    clamp,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
    scale,
    sub,
)


class TestConvForward:
    def test_ones_with_padding(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        w = np.ones((1, 1, 3, 3), np.float32)
        out = conv2d_forward(x, w, None, ConvSpec(1, 1, 3, 1, 1))
        assert out[0, 0, 1, 1] == 9.0
        assert out[0, 0, 0, 0] == out[0, 0, 0, 2] == out[0, 0, 2, 0] == out[0, 0, 2, 2] == 4.0
        assert out[0, 0, 0, 1] == 6.0

    def test_depthwise_identity(self, rng):
        c = 6
        x = rng.standard_normal((2, c, 5, 7)).astype(np.float32)
        w = np.zeros((c, 1, 3, 3), np.float32)
        w[:, 0, 1, 1] = 1
        out = conv2d_forward(x, w, None, ConvSpec(c, c, 3, 1, 1, groups=c))
        np.testing.assert_array_equal(out, x)

    def test_grouped_matches_naive_loop(self, rng):
        spec = ConvSpec(64, 128, 3, 1, 1, groups=32)
        x = rng.standard_normal((2, 64, 8, 8)).astype(np.float32)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        b = rng.standard_normal(128).astype(np.float32)
        out = conv2d_forward(x, w, b, spec)
        ref = naive_conv2d(x.astype(np.float64), w.astype(np.float64), b.astype(np.float64), 1, 1, 32)
        assert np.max(np.abs(out - ref)) < 1e-5

    @pytest.mark.parametrize("stride,pad,groups", [(1, 0, 1), (2, 1, 1), (2, 1, 2), (1, 2, 4), (3, 1, 2)])
    def test_against_naive_various(self, rng, stride, pad, groups):
        spec = ConvSpec(4, 8, (3, 3), stride, pad, groups)
        x = rng.standard_normal((2, 4, 7, 6))
        w = rng.standard_normal(spec.weight_shape)
        out = conv2d_forward(x, w, None, spec)
        ref = naive_conv2d(x, w, None, stride, pad, groups)
        assert out.shape == ref.shape
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_dense_groups_one_matches_naive(self, rng):
        spec = ConvSpec(3, 5, (3, 2), 1, 1, 1)
        x = rng.standard_normal((1, 3, 6, 6))
        w = rng.standard_normal(spec.weight_shape)
        np.testing.assert_allclose(conv2d_forward(x, w, None, spec), naive_conv2d(x, w, None, 1, 1, 1), atol=1e-12)

    def test_groups_equal_concatenated_dense(self, rng):
        g = 4
        spec = ConvSpec(8, 12, 3, 1, 1, g)
        x = rng.standard_normal((3, 8, 6, 6)).astype(np.float32)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        out = conv2d_forward(x, w, None, spec)
        parts = [
            conv2d_forward(x[:, 2 * i : 2 * i + 2], w[3 * i : 3 * i + 3], None, ConvSpec(2, 3, 3, 1, 1))
            for i in range(g)
        ]
        assert np.max(np.abs(out - np.concatenate(parts, axis=1))) < 1e-6

    def test_output_block_depends_only_on_its_input_block(self, rng):
        spec = ConvSpec(4, 4, 3, 1, 1, groups=2)
        w = rng.standard_normal(spec.weight_shape)
        x = rng.standard_normal((1, 4, 5, 5))
        base = conv2d_forward(x, w, None, spec)
        x2 = x.copy()
        x2[:, 2:] += 1.0
        moved = conv2d_forward(x2, w, None, spec)
        np.testing.assert_array_equal(base[:, :2], moved[:, :2])
        assert not np.allclose(base[:, 2:], moved[:, 2:])

    def test_errors(self):
        with pytest.raises(ValueError):
            ConvSpec(6, 8, 3, groups=4)
        spec = ConvSpec(2, 2, 3, 1, 1)
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros(spec.weight_shape), None, spec)
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((2, 2, 5, 5)), None, spec)

    def test_nan_input_raises(self):
        spec = ConvSpec(1, 1, 3, 1, 1)
        x = np.zeros((1, 1, 4, 4), np.float32)
        x[0, 0, 1, 1] = np.nan
        with pytest.raises(NonFiniteError):
            conv2d_forward(x, np.ones(spec.weight_shape, np.float32), None, spec)

    @settings(max_examples=25, deadline=None)
    @given(
        a=st.floats(-3, 3),
        b=st.floats(-3, 3),
        groups=st.sampled_from([1, 2, 4]),
        seed=st.integers(0, 2**16),
    )
    def test_linearity(self, a, b, groups, seed):
        r = np.random.default_rng(seed)
        spec = ConvSpec(4, 4, 3, 1, 1, groups)
        w = r.standard_normal(spec.weight_shape).astype(np.float32)
        x1 = r.standard_normal((1, 4, 5, 5)).astype(np.float32)
        x2 = r.standard_normal((1, 4, 5, 5)).astype(np.float32)
        lhs = conv2d_forward((a * x1 + b * x2).astype(np.float32), w, None, spec)
        rhs = a * conv2d_forward(x1, w, None, spec) + b * conv2d_forward(x2, w, None, spec)
        assert np.max(np.abs(lhs - rhs)) < 1e-5 * max(1.0, np.abs(rhs).max())


class TestConvBackward:
    def test_zero_grad_out(self, rng):
        spec = ConvSpec(4, 6, 3, 1, 1, 2)
        x = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        gx, gw, gb = conv2d_backward(np.zeros((2, 6, 5, 5), np.float32), x, w, spec)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_one_by_one_kernel(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = np.array([[[[2.5]]]])
        spec = ConvSpec(1, 1, 1, 1, 0)
        gx, gw, _ = conv2d_backward(np.ones((1, 1, 2, 2)), x, w, spec)
        assert gw[0, 0, 0, 0] == 10.0
        np.testing.assert_array_equal(gx, np.full((1, 1, 2, 2), 2.5))

    def test_cross_group_weight_grad_is_structurally_zero(self, rng):
        # grad of an output block w.r.t. the other group's input is exactly zero
        spec = ConvSpec(4, 4, 3, 1, 1, groups=2)
        x = rng.standard_normal((1, 4, 5, 5))
        w = rng.standard_normal(spec.weight_shape)
        g = np.zeros((1, 4, 5, 5))
        g[:, :2] = rng.standard_normal((1, 2, 5, 5))
        gx, gw, _ = conv2d_backward(g, x, w, spec)
        assert not gx[:, 2:].any()
        assert not gw[2:].any()

    @pytest.mark.parametrize("stride,pad,groups,bias", [(1, 1, 2, True), (2, 1, 1, False), (1, 0, 4, True), (2, 2, 2, True)])
    def test_finite_differences(self, rng, stride, pad, groups, bias):
        spec = ConvSpec(4, 4, 3, stride, pad, groups)
        x = rng.standard_normal((2, 4, 5, 5))
        w = rng.standard_normal(spec.weight_shape)
        b = rng.standard_normal(4) if bias else None
        probe = rng.standard_normal(conv2d_forward(x, w, b, spec).shape)

        def loss():
            return float(np.sum(conv2d_forward(x, w, b, spec) * probe))

        gx, gw, gb = conv2d_backward(probe, x, w, spec, with_bias=bias)
        assert max_rel_error(gx, numerical_grad(loss, x)) < 1e-4
        assert max_rel_error(gw, numerical_grad(loss, w)) < 1e-4
        if bias:
            assert max_rel_error(gb, numerical_grad(loss, b)) < 1e-4

    def test_shape_mismatch(self, rng):
        spec = ConvSpec(2, 2, 3, 1, 1)
        with pytest.raises(ShapeError):
            conv2d_backward(np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 4, 4)), np.zeros(spec.weight_shape), spec)


class TestElementwise:
    def test_add_zero_identity(self, rng):
        t = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(add(t, np.zeros_like(t)), t)

    def test_sub_then_add_roundtrip(self, rng):
        y = rng.random((1, 1, 8, 8)).astype(np.float32)
        x = rng.random((1, 1, 8, 8)).astype(np.float32)
        back = add(x, sub(y, x))
        ulp = np.spacing(np.maximum(np.abs(y), np.abs(x)))
        assert np.all(np.abs(back - y) <= ulp)

    def test_clamp(self):
        t = np.array([-0.1, 0.5, 1.2], np.float32).reshape(1, 1, 1, 3)
        np.testing.assert_array_equal(clamp(t, 0, 1).ravel(), [0, 0.5, 1])

    def test_scale(self):
        t = np.ones((1, 1, 2, 2), np.float32)
        assert scale(t, 3.0).dtype == np.float32
        assert (scale(t, 3.0) == 3).all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))

    def test_as_tensor_rank(self):
        with pytest.raises(ShapeError):
            as_tensor(np.zeros((3, 3)))
        with pytest.raises(NonFiniteError):
            as_tensor(np.full((1, 1, 1, 1), np.inf))


class TestMse:
    def test_optimum(self, rng):
        t = rng.random((2, 1, 4, 4)).astype(np.float32)
        loss, grad = mse_loss(t, t)
        assert loss == 0.0 and not grad.any()

    @pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 1, 4, 4), (3, 2, 5, 7)])
    def test_unit_difference(self, shape):
        pred = np.zeros(shape)
        loss, _ = mse_loss(pred, pred + 1)
        assert loss == 0.5

    def test_finite_differences(self, rng):
        pred = rng.standard_normal((2, 1, 4, 4))
        target = rng.standard_normal((2, 1, 4, 4))
        _, grad = mse_loss(pred, target)
        num = numerical_grad(lambda: mse_loss(pred, target)[0], pred)
        assert max_rel_error(grad, num) < 1e-5
