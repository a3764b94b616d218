"""Layer contracts: spec'd examples plus finite-difference gradient checks.

All gradient checks run in double precision with central differences
(step 1e-5) and a 1e-4 relative tolerance, away from kink points.
"""

import numpy as np
import pytest
from fdcheck import check_op_gradients, weighted_sum
from hypothesis import given, strategies as st

from itersr.errors import InvalidSpecError, ShapeError
from itersr.layers import (ConvSpec, clip_intensity, concat_channels, conv2d, l1_loss,
                           prelu, slice_channels, transposed_conv2d)
from itersr.tensor import Tensor, backward

RNG = np.random.default_rng(42)


def _conv_arrays(n=2, cin=3, cout=4, h=8, w=8, k=3):
    return {
        "x": RNG.standard_normal((n, cin, h, w)),
        "w": RNG.standard_normal((cout, cin, k, k)) * 0.2,
        "b": RNG.standard_normal((1, cout, 1, 1)) * 0.1,
    }


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(RNG.standard_normal((1, 1, 6, 7)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor.zeros((1, 1, 1, 1))
        out = conv2d(x, w, b, ConvSpec(1, 1, (1, 1)))
        assert np.array_equal(out.data, x.data)

    def test_partition_of_unity_reflect(self):
        # A kernel summing to 1 on a constant image must reproduce the constant.
        x = Tensor(np.full((1, 2, 6, 6), 11.5))
        w = RNG.random((2, 2, 3, 3))
        w /= w.sum(axis=(1, 2, 3), keepdims=True)
        out = conv2d(x, Tensor(w), Tensor.zeros((1, 2, 1, 1)),
                     ConvSpec(2, 2, (3, 3), padding_mode="reflect"))
        assert np.allclose(out.data, 11.5)

    def test_spatial_size_preserved_at_stride_1(self):
        x = Tensor(RNG.standard_normal((2, 3, 8, 8)))
        w = Tensor(RNG.standard_normal((4, 3, 5, 5)))
        b = Tensor.zeros((1, 4, 1, 1))
        out = conv2d(x, w, b, ConvSpec(3, 4, (5, 5)))
        assert out.data.shape == (2, 4, 8, 8)

    def test_stride_output_shape(self):
        x = Tensor(RNG.standard_normal((1, 1, 9, 9)))
        w = Tensor(RNG.standard_normal((2, 1, 3, 3)))
        b = Tensor.zeros((1, 2, 1, 1))
        out = conv2d(x, w, b, ConvSpec(1, 2, (3, 3), stride=2, padding_mode="zero"))
        assert out.data.shape == (1, 2, 5, 5)

    def test_shape_mismatch_raises(self):
        arrays = _conv_arrays()
        with pytest.raises(ShapeError):
            conv2d(Tensor(arrays["x"][:, :2]), Tensor(arrays["w"]),
                   Tensor(arrays["b"]), ConvSpec(3, 4, (3, 3)))

    def test_invalid_stride_raises(self):
        with pytest.raises(InvalidSpecError):
            ConvSpec(1, 1, (3, 3), stride=0)

    def test_even_kernel_with_reflect_raises(self):
        with pytest.raises(InvalidSpecError):
            ConvSpec(1, 1, (2, 2), padding_mode="reflect")

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    def test_gradients_match_finite_differences(self, padding):
        arrays = _conv_arrays(n=2, cin=3, cout=2, h=8, w=8, k=3)
        spec = ConvSpec(3, 2, (3, 3), padding_mode=padding)

        def op(t):
            return conv2d(t["x"], t["w"], t["b"], spec)

        check_op_gradients(op, arrays, ["x", "w", "b"])

    def test_gradients_with_stride(self):
        arrays = _conv_arrays(n=1, cin=2, cout=2, h=9, w=9, k=3)
        spec = ConvSpec(2, 2, (3, 3), stride=2, padding_mode="zero")

        def op(t):
            return conv2d(t["x"], t["w"], t["b"], spec)

        check_op_gradients(op, arrays, ["x", "w", "b"])


class TestTransposedConv2d:
    def test_identity_kernel(self):
        x = Tensor(RNG.standard_normal((1, 1, 5, 6)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor.zeros((1, 1, 1, 1))
        out = transposed_conv2d(x, w, b, ConvSpec(1, 1, (1, 1), transposed=True))
        assert np.allclose(out.data, x.data)

    @pytest.mark.parametrize("padding", ["zero", "reflect"])
    def test_adjoint_identity(self, padding):
        # <conv(x), y> == <x, tconv(y)> with a shared kernel and zero bias.
        k, cin, cout = 3, 2, 3
        x = RNG.standard_normal((1, cin, 7, 7))
        y = RNG.standard_normal((1, cout, 7, 7))
        w = RNG.standard_normal((cout, cin, k, k))
        conv_out = conv2d(Tensor(x), Tensor(w), Tensor.zeros((1, cout, 1, 1)),
                          ConvSpec(cin, cout, (k, k), padding_mode=padding))
        tconv_out = transposed_conv2d(Tensor(y), Tensor(w), Tensor.zeros((1, cin, 1, 1)),
                                      ConvSpec(cout, cin, (k, k), padding_mode=padding,
                                               transposed=True))
        lhs = float(np.sum(conv_out.data * y))
        rhs = float(np.sum(x * tconv_out.data))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)

    def test_spatial_size_preserved(self):
        x = Tensor(RNG.standard_normal((2, 4, 6, 9)))
        w = Tensor(RNG.standard_normal((4, 3, 5, 5)))
        b = Tensor.zeros((1, 3, 1, 1))
        out = transposed_conv2d(x, w, b, ConvSpec(4, 3, (5, 5), transposed=True))
        assert out.data.shape == (2, 3, 6, 9)

    def test_stride_rejected(self):
        with pytest.raises(InvalidSpecError):
            ConvSpec(1, 1, (3, 3), stride=2, transposed=True)

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    def test_gradients_match_finite_differences(self, padding):
        arrays = {
            "x": RNG.standard_normal((1, 3, 7, 7)),
            "w": RNG.standard_normal((3, 2, 3, 3)) * 0.2,
            "b": RNG.standard_normal((1, 2, 1, 1)) * 0.1,
        }
        spec = ConvSpec(3, 2, (3, 3), padding_mode=padding, transposed=True)

        def op(t):
            return transposed_conv2d(t["x"], t["w"], t["b"], spec)

        check_op_gradients(op, arrays, ["x", "w", "b"])


class TestPrelu:
    def test_positive_input_unchanged(self):
        x = Tensor(np.abs(RNG.standard_normal((1, 2, 4, 4))) + 0.1)
        s = Tensor(np.full((1, 2, 1, 1), 0.25))
        assert np.array_equal(prelu(x, s).data, x.data)

    def test_negative_definition(self):
        x = Tensor(np.full((1, 1, 1, 1), -1.0))
        s = Tensor(np.full((1, 1, 1, 1), 0.25))
        assert prelu(x, s).item() == pytest.approx(-0.25)

    def test_slope_count_mismatch(self):
        with pytest.raises(ShapeError):
            prelu(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((1, 2, 1, 1))))

    def test_gradients_match_finite_differences(self):
        # Keep inputs away from the kink at 0.
        x = RNG.standard_normal((2, 3, 5, 5))
        x = np.where(np.abs(x) < 0.2, x + 0.5, x)
        arrays = {"x": x, "s": RNG.uniform(0.1, 0.5, (1, 3, 1, 1))}

        def op(t):
            return prelu(t["x"], t["s"])

        check_op_gradients(op, arrays, ["x", "s"])


class TestConcatSlice:
    def test_concat_channel_counts(self):
        a = Tensor(RNG.standard_normal((1, 64, 4, 4)))
        b = Tensor(RNG.standard_normal((1, 64, 4, 4)))
        assert concat_channels(a, b).data.shape[1] == 128

    def test_concat_then_slice_roundtrip(self):
        a = Tensor(RNG.standard_normal((1, 3, 4, 4)))
        z = Tensor(np.zeros((1, 2, 4, 4)))
        joined = concat_channels(a, z)
        assert np.array_equal(slice_channels(joined, 0, 3).data, a.data)

    def test_spatial_mismatch_raises(self):
        with pytest.raises(ShapeError):
            concat_channels(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 5, 4))))

    def test_backward_splits_gradient(self):
        arrays = {"a": RNG.standard_normal((1, 2, 3, 3)),
                  "b": RNG.standard_normal((1, 3, 3, 3))}

        def op(t):
            return concat_channels(t["a"], t["b"])

        check_op_gradients(op, arrays, ["a", "b"])


class TestClipIntensity:
    def test_in_range_unchanged(self):
        x = Tensor(RNG.uniform(0, 255, (1, 3, 4, 4)))
        assert np.array_equal(clip_intensity(x, 0, 255).data, x.data)

    def test_clamps_definition(self):
        x = Tensor(np.array([300.0, -4.0, 10.0, 255.0]).reshape(1, 1, 2, 2))
        out = clip_intensity(x, 0, 255)
        assert out.data.reshape(-1).tolist() == [255.0, 0.0, 10.0, 255.0]

    def test_invalid_range(self):
        with pytest.raises(InvalidSpecError):
            clip_intensity(Tensor(np.zeros((1, 1, 1, 1))), 5, 5)

    def test_gradient_mask(self):
        x = Tensor(np.array([300.0, -4.0, 10.0, 20.0]).reshape(1, 1, 2, 2),
                   requires_grad=True)
        out = clip_intensity(x, 0, 255)
        backward(weighted_sum(out, np.ones_like(out.data)))
        assert x.grad.reshape(-1).tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_gradients_away_from_kinks(self):
        x = RNG.uniform(10, 240, (1, 2, 4, 4))  # interior only
        arrays = {"x": x}

        def op(t):
            return clip_intensity(t["x"], 0, 255)

        check_op_gradients(op, arrays, ["x"])


class TestL1Loss:
    def test_identical_inputs_zero(self):
        x = Tensor(RNG.standard_normal((2, 1, 3, 3)))
        assert l1_loss(x, x).item() == 0.0

    def test_single_element_definition(self):
        pred = Tensor(np.full((1, 1, 1, 1), 3.0))
        target = Tensor(np.full((1, 1, 1, 1), 1.0))
        assert l1_loss(pred, target).item() == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))

    def test_gradient_is_half_sign(self):
        pred = Tensor(np.array([2.0, -3.0, 5.0, 7.0]).reshape(1, 1, 2, 2),
                      requires_grad=True)
        target = Tensor(np.array([1.0, 0.0, 9.0, 7.0]).reshape(1, 1, 2, 2))
        backward(l1_loss(pred, target))
        assert pred.grad.reshape(-1).tolist() == [0.5, -0.5, -0.5, 0.0]

    def test_gradients_away_from_zeros(self):
        pred = RNG.standard_normal((2, 1, 3, 3))
        target = pred + np.where(RNG.standard_normal(pred.shape) > 0, 1.0, -1.0)
        arrays = {"p": pred, "t": target}

        def op(t):
            return l1_loss(t["p"], t["t"])

        check_op_gradients(op, arrays, ["p"])


@given(st.integers(1, 3), st.integers(1, 4), st.integers(3, 8), st.integers(3, 8))
def test_ops_are_deterministic(n, c, h, w):
    rng = np.random.default_rng(n * 1000 + c * 100 + h * 10 + w)
    x = rng.standard_normal((n, c, h, w))
    wgt = rng.standard_normal((c, c, 3, 3))
    b = rng.standard_normal((1, c, 1, 1))
    spec = ConvSpec(c, c, (3, 3))
    r1 = conv2d(Tensor(x), Tensor(wgt), Tensor(b), spec).data
    r2 = conv2d(Tensor(x), Tensor(wgt), Tensor(b), spec).data
    assert np.array_equal(r1, r2)
