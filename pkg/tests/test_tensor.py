import numpy as np
import pytest

from irsr.errors import ArgumentError, DimensionError
from irsr.tensor import (
    Tensor,
    absolute,
    add,
    bilinear_upsample,
    channel_scale,
    check_gradients,
    concat,
    conv2d,
    flip,
    layer_norm,
    linear,
    mean_all,
    mul,
    nearest_upsample2,
    permute,
    pixel_shuffle,
    pixel_unshuffle,
    pointwise,
    reshape,
    scale,
    sigmoid,
    silu,
    softplus,
    sub,
    sum_all,
)


def conv2d_oracle(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct six-nested-loop convolution, the independent reference."""
    bs, c_in, h, wd = x.shape
    c_out, c_in_g, kh, kw = w.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    xp = np.zeros((bs, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    out = np.zeros((bs, c_out, h_out, w_out))
    og = c_out // groups
    for n in range(bs):
        for o in range(c_out):
            g = o // og
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for c in range(c_in_g):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    w[o, c, ki, kj]
                                    * xp[n, g * c_in_g + c, i * stride + ki, j * stride + kj]
                                )
                    out[n, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def linear_oracle(x, w, b=None):
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros((flat.shape[0], w.shape[0]))
    for r in range(flat.shape[0]):
        for o in range(w.shape[0]):
            acc = 0.0
            for i in range(w.shape[1]):
                acc += flat[r, i] * w[o, i]
            out[r, o] = acc + (0.0 if b is None else b[o])
    return out.reshape(x.shape[:-1] + (w.shape[0],))


class TestConv2d:
    def test_all_ones_padded(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, padding=1)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 3, 4, 5)))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = conv2d(x, Tensor(w))
        np.testing.assert_array_equal(out.data, x.data)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b, padding=1), atol=1e-10)

    def test_strided_grouped_against_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 4, 7, 6))
        w = rng.normal(size=(6, 2, 3, 3))
        b = rng.normal(size=6)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1, groups=2)
        np.testing.assert_allclose(
            out.data, conv2d_oracle(x, w, b, stride=2, padding=1, groups=2), atol=1e-10
        )

    def test_depthwise_against_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 4, 5, 5))
        w = rng.normal(size=(4, 1, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), padding=1, groups=4)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, padding=1, groups=4), atol=1e-10)

    def test_bad_stride_rejected(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        with pytest.raises(ArgumentError):
            conv2d(x, w, stride=0)

    def test_group_mismatch_rejected(self):
        x = Tensor(np.ones((1, 3, 4, 4)))
        w = Tensor(np.ones((2, 1, 3, 3)))
        with pytest.raises(DimensionError):
            conv2d(x, w, padding=1, groups=2)


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(12, dtype=float).reshape(3, 4))
        out = linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_weight_gives_bias(self):
        x = Tensor(np.ones((2, 3)))
        out = linear(x, Tensor(np.zeros((5, 3))), Tensor(np.full(5, 7.0)))
        np.testing.assert_array_equal(out.data, np.full((2, 5), 7.0))

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 6))
        w = rng.normal(size=(4, 6))
        b = rng.normal(size=4)
        out = linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, linear_oracle(x, w, b), atol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


class TestLayerNorm:
    def test_constant_slice_zeroed(self):
        x = Tensor(np.full((2, 3, 4), 5.0))
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_zero_gamma_passes_beta(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 3, 4)))
        out = layer_norm(x, Tensor(np.zeros(4)), Tensor(np.full(4, 2.5)))
        np.testing.assert_array_equal(out.data, np.full((2, 3, 4), 2.5))

    def test_normalized_moments(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(2, 5, 16)))
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-12)
        mean = out.data.mean(axis=-1)
        var = out.data.var(axis=-1)
        np.testing.assert_allclose(mean, 0.0, atol=1e-9)
        np.testing.assert_allclose(var, 1.0, atol=1e-6)

    def test_bad_affine_shape(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.ones((1, 2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


class TestPointwise:
    def test_silu_values(self):
        np.testing.assert_allclose(silu(Tensor([0.0])).data, [0.0], atol=1e-15)
        np.testing.assert_allclose(silu(Tensor([1.0])).data, [0.7310585786300049], atol=1e-12)

    def test_mul_identity(self):
        x = Tensor([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(mul(x, 1.0).data, x.data)

    def test_dispatcher(self):
        x = Tensor([2.0])
        assert pointwise(x, "sigmoid").data == pytest.approx(1.0 / (1.0 + np.exp(-2.0)))
        assert pointwise(x, "add", Tensor([1.0])).data == pytest.approx(3.0)
        assert pointwise(x, "scale", 0.5).data == pytest.approx(1.0)
        assert pointwise(x, "scale-by-scalar", 2.0).data == pytest.approx(4.0)

    def test_broadcast_rejected(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            pointwise(Tensor([1.0]), "relu")


class TestPixelShuffle:
    def test_definitional(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
        out = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(out.data, [[[[1.0, 2.0], [3.0, 4.0]]]])

    def test_r1_identity(self):
        x = Tensor(np.random.default_rng(7).normal(size=(1, 3, 2, 2)))
        np.testing.assert_array_equal(pixel_shuffle(x, 1).data, x.data)

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(2, 12, 3, 4)))
        back = pixel_unshuffle(pixel_shuffle(x, 2), 2)
        assert np.array_equal(back.data, x.data)

    def test_indivisible_channels(self):
        with pytest.raises(ArgumentError):
            pixel_shuffle(Tensor(np.ones((1, 3, 2, 2))), 2)


class TestCheckGradients:
    def test_quadratic(self):
        point = Tensor(np.array([1.0, 2.0, 3.0]))
        err = check_gradients(lambda x: sum_all(mul(x, x)), point)
        assert err < 1e-7

    def test_silu_sum(self):
        point = Tensor(np.random.default_rng(9).normal(size=(8,)))
        assert check_gradients(lambda x: sum_all(silu(x)), point) < 1e-5

    def test_constant_fn(self):
        point = Tensor(np.array([1.0, 2.0]))
        assert check_gradients(lambda x: mul(sum_all(x), 0.0), point) == 0.0

    def test_non_scalar_rejected(self):
        with pytest.raises(ArgumentError):
            check_gradients(lambda x: x, Tensor(np.ones(3)))


class TestGradientSuite:
    """Every differentiable op against central finite differences (< 1e-5)."""

    def _rand(self, shape, seed):
        return Tensor(np.random.default_rng(seed).normal(size=shape))

    def test_elementwise(self):
        p = self._rand((3, 4), 10)
        other = self._rand((3, 4), 11)
        cases = [
            lambda x: sum_all(add(x, other)),
            lambda x: sum_all(sub(x, other)),
            lambda x: sum_all(mul(x, other)),
            lambda x: sum_all(scale(x, -2.5)),
            lambda x: sum_all(silu(x)),
            lambda x: sum_all(sigmoid(x)),
            lambda x: sum_all(softplus(x)),
            lambda x: mean_all(mul(x, x)),
        ]
        for fn in cases:
            assert check_gradients(fn, p) < 1e-5

    def test_absolute(self):
        # Stay away from the kink at 0 where the derivative is undefined.
        p = Tensor(np.array([1.0, -2.0, 0.5, -0.25]))
        assert check_gradients(lambda x: sum_all(absolute(x)), p) < 1e-5

    def test_linear_all_inputs(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(2, 5)))
        w = Tensor(rng.normal(size=(3, 5)))
        b = Tensor(rng.normal(size=3))
        assert check_gradients(lambda t: sum_all(silu(linear(t, w, b))), x) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(linear(x, t, b))), w) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(linear(x, w, t))), b) < 1e-5

    def test_conv2d_all_inputs(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(1, 2, 4, 4)))
        w = Tensor(rng.normal(size=(2, 2, 3, 3)))
        b = Tensor(rng.normal(size=2))
        assert check_gradients(lambda t: sum_all(silu(conv2d(t, w, b, padding=1))), x) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(conv2d(x, t, b, padding=1))), w) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(conv2d(x, w, t, padding=1))), b) < 1e-5

    def test_conv2d_grouped_strided(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.normal(size=(1, 4, 5, 5)))
        w = Tensor(rng.normal(size=(4, 2, 3, 3)))
        assert (
            check_gradients(
                lambda t: sum_all(silu(conv2d(x, t, stride=2, padding=1, groups=2))), w
            )
            < 1e-5
        )

    def test_layer_norm_all_inputs(self):
        rng = np.random.default_rng(15)
        x = Tensor(rng.normal(size=(2, 3, 6)))
        g = Tensor(rng.normal(size=6))
        b = Tensor(rng.normal(size=6))
        assert check_gradients(lambda t: sum_all(silu(layer_norm(t, g, b))), x) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(layer_norm(x, t, b))), g) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(layer_norm(x, g, t))), b) < 1e-5

    def test_shape_ops(self):
        p = self._rand((1, 4, 2, 3), 16)
        cases = [
            lambda x: sum_all(silu(pixel_shuffle(x, 2))),
            lambda x: sum_all(silu(pixel_unshuffle(x, 1))),
            lambda x: sum_all(silu(reshape(x, (1, 4, 6)))),
            lambda x: sum_all(silu(permute(x, (0, 2, 1, 3)))),
            lambda x: sum_all(silu(flip(x, 2))),
            lambda x: sum_all(silu(nearest_upsample2(x))),
            lambda x: sum_all(silu(bilinear_upsample(x, 2))),
        ]
        for fn in cases:
            assert check_gradients(fn, p) < 1e-5

    def test_concat(self):
        a = self._rand((1, 2, 3, 3), 17)
        b = self._rand((1, 3, 3, 3), 18)
        assert check_gradients(lambda x: sum_all(silu(concat([x, b], axis=1))), a) < 1e-5
        assert check_gradients(lambda x: sum_all(silu(concat([a, x], axis=1))), b) < 1e-5

    def test_channel_scale(self):
        x = self._rand((2, 3, 4), 21)
        s = self._rand((4,), 22)
        assert check_gradients(lambda t: sum_all(silu(channel_scale(t, s))), x) < 1e-5
        assert check_gradients(lambda t: sum_all(silu(channel_scale(x, t))), s) < 1e-5


class TestTape:
    def test_shared_subexpression_accumulates(self):
        rng = np.random.default_rng(19)
        a_val = rng.normal(size=(3,))
        b_val = rng.normal(size=(3,))

        a1, b1 = Tensor(a_val, requires_grad=True), Tensor(b_val, requires_grad=True)
        t = mul(a1, b1)
        sum_all(add(t, t)).backward()

        a2, b2 = Tensor(a_val, requires_grad=True), Tensor(b_val, requires_grad=True)
        sum_all(add(mul(a2, b2), mul(a2, b2))).backward()

        np.testing.assert_allclose(a1.grad, a2.grad, atol=1e-12)
        np.testing.assert_allclose(b1.grad, b2.grad, atol=1e-12)

    def test_tape_freed_after_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = sum_all(mul(x, x))
        assert y._backward is not None
        y.backward()
        assert y._backward is None and y._parents == ()
        np.testing.assert_array_equal(x.grad, 2.0 * np.ones(3))

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ArgumentError):
            mul(x, x).backward()

    def test_untracked_branch_gets_no_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        frozen = Tensor(np.ones(3))
        out = sum_all(mul(x, frozen))
        out.backward()
        assert frozen.grad is None
        assert x.grad is not None


class TestBilinearUpsample:
    def test_constant_preserved(self):
        x = Tensor(np.full((1, 1, 4, 4), 3.5))
        out = bilinear_upsample(x, 2)
        assert out.shape == (1, 1, 8, 8)
        np.testing.assert_allclose(out.data, 3.5, atol=1e-12)

    def test_factor_one_identity(self):
        x = Tensor(np.random.default_rng(20).normal(size=(1, 2, 3, 3)))
        np.testing.assert_array_equal(bilinear_upsample(x, 1).data, x.data)
