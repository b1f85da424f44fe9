import math

import numpy as np
import pytest

from irsr.errors import ArgumentError, DimensionError
from irsr.ssm import (
    DIRECTIONS,
    ScanDirection,
    SelectiveScanParams,
    SsmParams,
    discretize_zoh,
    fold_direction,
    frozen_selective_params,
    scan_2d,
    selective_scan,
    ssm_kernel,
    ssm_scan_lti,
    unfold_direction,
)
from irsr.tensor import Tensor, check_gradients, mean_all, mul, sum_all


def make_params(a_bar, b_bar, c, d):
    return SsmParams(
        a_bar=Tensor(a_bar), b_bar=Tensor(b_bar), c=Tensor(c), d=Tensor(d)
    )


def random_stable_params(rng, channels, n):
    """Random LTI params discretized from a negative continuous diagonal."""
    a = Tensor(-rng.uniform(0.1, 2.0, size=(channels, n)))
    b = Tensor(rng.normal(size=(channels, n)))
    delta = Tensor(rng.uniform(0.05, 0.5, size=channels))
    a_bar, b_bar = discretize_zoh(a, b, delta)
    c = Tensor(rng.normal(size=(channels, n)))
    d = Tensor(rng.normal(size=channels))
    return SsmParams(a_bar=a_bar, b_bar=b_bar, c=c, d=d, delta=delta)


def kernel_conv(params, x):
    """Causal convolution with the structured kernel plus feed-through."""
    kern = ssm_kernel(params, x.shape[2]).data
    out = np.empty_like(x)
    for b in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[b, c] = np.convolve(x[b, c], kern[c])[: x.shape[2]]
            out[b, c] += params.d.data[c] * x[b, c]
    return out


class TestDiscretizeZoh:
    def test_zero_a_limit(self):
        a_bar, b_bar = discretize_zoh(
            Tensor([[0.0]]), Tensor([[2.0]]), Tensor([0.5])
        )
        assert a_bar.data[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert b_bar.data[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_scalar_closed_form(self):
        a_bar, b_bar = discretize_zoh(
            Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([0.1])
        )
        # Closed-form oracle: (delta*a)^-1 (exp(delta*a) - 1) * delta * b.
        expected_a = math.exp(-0.1)
        expected_b = (math.exp(-0.1) - 1.0) / (-0.1) * 0.1 * 1.0
        assert a_bar.data[0, 0] == pytest.approx(expected_a, abs=1e-12)
        assert b_bar.data[0, 0] == pytest.approx(expected_b, abs=1e-12)

    def test_vanishing_timescale(self):
        a_bar, b_bar = discretize_zoh(
            Tensor([[-3.0, 2.0]]), Tensor([[1.0, 1.0]]), Tensor([1e-12])
        )
        np.testing.assert_allclose(a_bar.data, 1.0, atol=1e-9)
        np.testing.assert_allclose(b_bar.data, 0.0, atol=1e-9)

    def test_stability_magnitude(self):
        rng = np.random.default_rng(0)
        a = Tensor(-rng.uniform(0.01, 5.0, size=(3, 4)))
        b = Tensor(rng.normal(size=(3, 4)))
        delta = Tensor(rng.uniform(0.01, 1.0, size=3))
        a_bar, _ = discretize_zoh(a, b, delta)
        assert np.all(np.abs(a_bar.data) <= 1.0)

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ArgumentError):
            discretize_zoh(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([0.0]))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        a = Tensor(-rng.uniform(0.1, 2.0, size=(2, 3)))
        b = Tensor(rng.normal(size=(2, 3)))
        delta = Tensor(rng.uniform(0.05, 0.5, size=2))

        def loss_through(build):
            def fn(t):
                aa, bb, dd = build(t)
                a_bar, b_bar = discretize_zoh(aa, bb, dd)
                return sum_all(mul(a_bar, a_bar)) + sum_all(mul(b_bar, b_bar))

            return fn

        assert check_gradients(loss_through(lambda t: (t, b, delta)), a) < 1e-5
        assert check_gradients(loss_through(lambda t: (a, t, delta)), b) < 1e-5
        assert check_gradients(loss_through(lambda t: (a, b, t)), delta) < 1e-5


class TestSsmKernel:
    def test_geometric_decay(self):
        params = make_params([[0.5]], [[1.0]], [[1.0]], [0.0])
        np.testing.assert_allclose(ssm_kernel(params, 3).data, [[1.0, 0.5, 0.25]])

    def test_memoryless(self):
        params = make_params([[0.0, 0.0]], [[2.0, 3.0]], [[1.0, 1.0]], [0.0])
        kern = ssm_kernel(params, 4).data
        np.testing.assert_allclose(kern, [[5.0, 0.0, 0.0, 0.0]])

    def test_zero_readout(self):
        params = make_params([[0.9]], [[1.0]], [[0.0]], [1.0])
        np.testing.assert_array_equal(ssm_kernel(params, 5).data, np.zeros((1, 5)))


class TestSsmScanLti:
    def test_memoryless_pointwise(self):
        rng = np.random.default_rng(2)
        params = make_params([[0.0, 0.0]], [[1.5, -0.5]], [[2.0, 1.0]], [0.3])
        x = rng.normal(size=(2, 1, 6))
        y = ssm_scan_lti(params, Tensor(x))
        gain = float((params.c.data * params.b_bar.data).sum() + params.d.data[0])
        np.testing.assert_allclose(y.data, gain * x, atol=1e-12)

    def test_cumulative_sum(self):
        params = make_params([[1.0]], [[1.0]], [[1.0]], [0.0])
        y = ssm_scan_lti(params, Tensor(np.ones((1, 1, 3))))
        np.testing.assert_allclose(y.data, [[[1.0, 2.0, 3.0]]])

    def test_matches_kernel_convolution(self):
        rng = np.random.default_rng(3)
        params = random_stable_params(rng, channels=2, n=3)
        x = rng.normal(size=(1, 2, 16))
        y = ssm_scan_lti(params, Tensor(x))
        np.testing.assert_allclose(y.data, kernel_conv(params, x), atol=1e-8)

    def test_empty_sequence(self):
        params = make_params([[0.5]], [[1.0]], [[1.0]], [0.0])
        y = ssm_scan_lti(params, Tensor(np.zeros((1, 1, 0))))
        assert y.shape == (1, 1, 0)

    def test_gradients_all_inputs(self):
        rng = np.random.default_rng(4)
        base = random_stable_params(rng, channels=2, n=2)
        x = Tensor(rng.normal(size=(1, 2, 5)))

        def with_field(field):
            def fn(t):
                kw = {
                    "a_bar": Tensor(base.a_bar.data),
                    "b_bar": Tensor(base.b_bar.data),
                    "c": Tensor(base.c.data),
                    "d": Tensor(base.d.data),
                }
                inp = Tensor(x.data)
                if field == "x":
                    inp = t
                else:
                    kw[field] = t
                return mean_all(mul(ssm_scan_lti(SsmParams(**kw), inp), 1.0))

            return fn

        for field, point in [
            ("x", x),
            ("a_bar", base.a_bar),
            ("b_bar", base.b_bar),
            ("c", base.c),
            ("d", base.d),
        ]:
            assert check_gradients(with_field(field), point) < 1e-5, field

    def test_bounded_state_for_stable_params(self):
        # |h_t| <= max|b_bar * x| / (1 - max|a_bar|) for negative continuous A.
        rng = np.random.default_rng(5)
        params = random_stable_params(rng, channels=2, n=3)
        x = rng.uniform(-1.0, 1.0, size=(1, 2, 1024))
        a_bar, b_bar = params.a_bar.data, params.b_bar.data
        bound = np.max(np.abs(b_bar[None, :, None, :] * x[:, :, :, None])) / (
            1.0 - np.max(np.abs(a_bar))
        )
        h = np.zeros((1, 2, 3))
        worst = 0.0
        for t in range(x.shape[2]):
            h = a_bar * h + b_bar * x[:, :, t, None]
            worst = max(worst, float(np.max(np.abs(h))))
        assert worst <= bound + 1e-12


def selective_scan_oracle(x, proj):
    """Step-by-step scalar recurrence, independent of the vectorized path."""
    b_sz, length, c_sz = x.shape
    n = proj.a.data.shape[1]
    y = np.zeros_like(x)
    for b in range(b_sz):
        h = np.zeros((c_sz, n))
        for t in range(length):
            xt = x[b, t]
            delta = np.log1p(np.exp(proj.w_delta.data @ xt + proj.b_delta.data))
            bt = proj.w_b.data @ xt + proj.b_b.data
            ct = proj.w_c.data @ xt + proj.b_c.data
            for c in range(c_sz):
                for s in range(n):
                    da = delta[c] * proj.a.data[c, s]
                    a_bar = math.exp(da)
                    if abs(da) < 1e-8:
                        b_bar = delta[c] * bt[s]
                    else:
                        b_bar = (math.exp(da) - 1.0) / da * delta[c] * bt[s]
                    h[c, s] = a_bar * h[c, s] + b_bar * xt[c]
                y[b, t, c] = float(ct @ h[c]) + proj.d.data[c] * xt[c]
    return y


def random_selective_params(rng, channels, n, weight_scale=0.5):
    return SelectiveScanParams(
        w_delta=Tensor(weight_scale * rng.normal(size=(channels, channels))),
        b_delta=Tensor(rng.normal(size=channels)),
        w_b=Tensor(weight_scale * rng.normal(size=(n, channels))),
        b_b=Tensor(rng.normal(size=n)),
        w_c=Tensor(weight_scale * rng.normal(size=(n, channels))),
        b_c=Tensor(rng.normal(size=n)),
        a=Tensor(-rng.uniform(0.1, 2.0, size=(channels, n))),
        d=Tensor(rng.normal(size=channels)),
    )


class TestSelectiveScan:
    def test_frozen_matches_lti(self):
        rng = np.random.default_rng(6)
        channels, n = 3, 4
        delta0 = rng.uniform(0.05, 0.5, size=channels)
        b0 = rng.normal(size=n)
        c0 = rng.normal(size=n)
        a = -rng.uniform(0.1, 2.0, size=(channels, n))
        d = rng.normal(size=channels)

        proj = frozen_selective_params(delta0, b0, c0, a, d)
        x = rng.normal(size=(2, 10, channels))
        y_sel = selective_scan(Tensor(x), proj)

        lti = SsmParams.from_continuous(
            Tensor(a),
            Tensor(np.tile(b0, (channels, 1))),
            Tensor(np.tile(c0, (channels, 1))),
            Tensor(d),
            Tensor(delta0),
        )
        y_lti = ssm_scan_lti(lti, Tensor(x.transpose(0, 2, 1)))
        np.testing.assert_allclose(
            y_sel.data, y_lti.data.transpose(0, 2, 1), atol=1e-12
        )

    def test_zero_input_zero_bias(self):
        channels, n = 2, 3
        proj = SelectiveScanParams(
            w_delta=Tensor(np.zeros((channels, channels))),
            b_delta=Tensor(np.zeros(channels)),
            w_b=Tensor(np.zeros((n, channels))),
            b_b=Tensor(np.zeros(n)),
            w_c=Tensor(np.zeros((n, channels))),
            b_c=Tensor(np.zeros(n)),
            a=Tensor(-np.ones((channels, n))),
            d=Tensor(np.ones(channels)),
        )
        y = selective_scan(Tensor(np.zeros((1, 5, channels))), proj)
        np.testing.assert_array_equal(y.data, np.zeros((1, 5, channels)))

    def test_matches_stepwise_oracle(self):
        rng = np.random.default_rng(7)
        proj = random_selective_params(rng, channels=3, n=4)
        x = rng.normal(size=(2, 8, 3))
        y = selective_scan(Tensor(x), proj)
        np.testing.assert_allclose(y.data, selective_scan_oracle(x, proj), atol=1e-9)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # NaN injected on purpose
    def test_non_finite_timescale_surfaces(self):
        proj = random_selective_params(np.random.default_rng(12), channels=2, n=2)
        proj.b_delta.data = np.array([np.nan, 0.0])
        from irsr.errors import NumericError

        with pytest.raises(NumericError, match="timescale"):
            selective_scan(Tensor(np.zeros((1, 3, 2))), proj)

    def test_gradients_all_inputs(self):
        rng = np.random.default_rng(8)
        base = random_selective_params(rng, channels=2, n=2)
        x = Tensor(rng.normal(size=(1, 4, 2)))
        fields = ["w_delta", "b_delta", "w_b", "b_b", "w_c", "b_c", "a", "d"]

        def with_field(field):
            def fn(t):
                kw = {f: Tensor(getattr(base, f).data) for f in fields}
                inp = Tensor(x.data)
                if field == "x":
                    inp = t
                else:
                    kw[field] = t
                return mean_all(mul(selective_scan(inp, SelectiveScanParams(**kw)), 1.0))

            return fn

        assert check_gradients(with_field("x"), x) < 1e-5
        for field in fields:
            assert check_gradients(with_field(field), getattr(base, field)) < 1e-5, field


class TestDirections:
    def test_definitional_orders(self):
        grid = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(
            unfold_direction(grid, ScanDirection.ROW_FORWARD).data, [[[1, 2, 3, 4]]]
        )
        np.testing.assert_array_equal(
            unfold_direction(grid, ScanDirection.COL_FORWARD).data, [[[1, 3, 2, 4]]]
        )
        np.testing.assert_array_equal(
            unfold_direction(grid, ScanDirection.ROW_REVERSE).data, [[[4, 3, 2, 1]]]
        )
        np.testing.assert_array_equal(
            unfold_direction(grid, ScanDirection.COL_REVERSE).data, [[[4, 2, 3, 1]]]
        )

    def test_round_trip_all_directions(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(2, 3, 4, 5)))
        for d in DIRECTIONS:
            back = fold_direction(unfold_direction(x, d), d, 4, 5)
            np.testing.assert_array_equal(back.data, x.data)

    def test_orders_pairwise_distinct(self):
        x = Tensor(np.arange(12.0).reshape(1, 1, 3, 4))
        seqs = [tuple(unfold_direction(x, d).data.ravel()) for d in DIRECTIONS]
        assert len(set(seqs)) == 4

    def test_fold_length_mismatch(self):
        with pytest.raises(DimensionError):
            fold_direction(Tensor(np.zeros((1, 1, 5))), ScanDirection.ROW_FORWARD, 2, 2)


class TestScan2d:
    def test_identity_scans(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        out = scan_2d(x, [lambda s: s] * 4)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_constant_input_memoryless_params(self):
        # With a_bar = 0 every direction maps the constant sequence to the
        # same constant, so the average stays spatially constant.
        params = make_params([[0.0, 0.0]], [[1.0, 2.0]], [[0.5, 1.0]], [0.25])
        x = Tensor(np.full((1, 1, 4, 4), 3.0))
        out = scan_2d(x, [lambda s: ssm_scan_lti(params, s)] * 4)
        gain = float((params.c.data * params.b_bar.data).sum() + params.d.data[0])
        np.testing.assert_allclose(out.data, 3.0 * gain, atol=1e-12)

    def test_matches_hand_folded_oracle(self):
        rng = np.random.default_rng(11)
        a_bar, b_bar, c, d = 0.7, 1.3, 0.9, 0.2
        params = make_params([[a_bar]], [[b_bar]], [[c]], [d])
        grid = rng.normal(size=(2, 2))
        x = Tensor(grid.reshape(1, 1, 2, 2))
        out = scan_2d(x, [lambda s: ssm_scan_lti(params, s)] * 4)

        def scan_seq(seq):
            h, ys = 0.0, []
            for v in seq:
                h = a_bar * h + b_bar * v
                ys.append(c * h + d * v)
            return ys

        orders = {
            "rf": [(0, 0), (0, 1), (1, 0), (1, 1)],
            "rr": [(1, 1), (1, 0), (0, 1), (0, 0)],
            "cf": [(0, 0), (1, 0), (0, 1), (1, 1)],
            "cr": [(1, 1), (0, 1), (1, 0), (0, 0)],
        }
        acc = np.zeros((2, 2))
        for order in orders.values():
            ys = scan_seq([grid[p] for p in order])
            for pos, y in zip(order, ys):
                acc[pos] += y
        np.testing.assert_allclose(out.data[0, 0], acc / 4.0, atol=1e-10)

    def test_wrong_fn_count(self):
        with pytest.raises(ArgumentError):
            scan_2d(Tensor(np.zeros((1, 1, 2, 2))), [lambda s: s] * 3)
