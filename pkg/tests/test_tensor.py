"""Tensor operation and autodiff tests.

Every differentiable op is checked against central finite differences in
64-bit; forward values are checked against hand-computed oracles.
"""

import numpy as np
import pytest

from pyrapose import tensor as T
from pyrapose.tensor import (NormState, Tape, TapeError, Tensor, backward,
                             finite_diff_check)


def t64(arr):
    return Tensor(np.asarray(arr), dtype=np.float64)


class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        y = T.conv2d(x, w)
        np.testing.assert_array_equal(y.data, x.data)

    def test_ones_3x3_same_padding(self):
        """All-ones 4x4 input, all-ones 3x3 kernel: counts of overlap."""
        x = Tensor(np.ones((1, 4, 4, 1), dtype=np.float32))
        w = Tensor(np.ones((3, 3, 1, 1), dtype=np.float32))
        y = T.conv2d(x, w).data[0, :, :, 0]
        assert y[1, 1] == 9.0 and y[1, 2] == 9.0
        assert y[0, 0] == 4.0 and y[3, 3] == 4.0
        assert y[0, 1] == 6.0  # edge, not corner

    def test_strided_table_shape(self):
        """256x256x3 through a 7x7/2 64-filter bank halves the extent."""
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 256, 256, 3)).astype(np.float32))
        w = Tensor(rng.normal(size=(7, 7, 3, 64)).astype(np.float32) * 0.05)
        y = T.conv2d(x, w, stride=2)
        assert y.data.shape == (1, 128, 128, 64)

    def test_valid_padding_arithmetic(self):
        x = Tensor(np.ones((1, 5, 5, 2), dtype=np.float32))
        w = Tensor(np.ones((3, 3, 2, 4), dtype=np.float32))
        assert T.conv2d(x, w, padding="valid").data.shape == (1, 3, 3, 4)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.ones((1, 4, 4, 3), dtype=np.float32))
        w = Tensor(np.ones((3, 3, 2, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="channels"):
            T.conv2d(x, w)

    def test_gradcheck_dense(self):
        rng = np.random.default_rng(1)
        w = t64(rng.normal(size=(3, 3, 2, 3)))
        x = t64(rng.normal(size=(1, 5, 5, 2)))

        def f(v):
            return T.sum_all(T.square(T.conv2d(v, w, stride=2)))

        assert finite_diff_check(f, x) < 1e-5

    def test_gradcheck_weights(self):
        rng = np.random.default_rng(2)
        x = t64(rng.normal(size=(2, 4, 4, 2)))
        w0 = t64(rng.normal(size=(3, 3, 2, 3)))

        def f(w):
            return T.sum_all(T.square(T.conv2d(x, w)))

        assert finite_diff_check(f, w0) < 1e-5


class TestSeparableConv:
    def test_impulse_identity(self):
        """Center-impulse depthwise + identity pointwise is a no-op."""
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(1, 6, 6, 3)).astype(np.float32))
        dw = np.zeros((3, 3, 3), dtype=np.float32)
        dw[1, 1, :] = 1.0
        pw = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
        y = T.separable_conv2d(x, Tensor(dw), Tensor(pw))
        np.testing.assert_allclose(y.data, x.data, rtol=1e-6)

    def test_shape_contract(self):
        x = Tensor(np.ones((1, 8, 8, 4), dtype=np.float32))
        dw = Tensor(np.ones((3, 3, 4), dtype=np.float32))
        pw = Tensor(np.ones((1, 1, 4, 16), dtype=np.float32))
        assert T.separable_conv2d(x, dw, pw).data.shape == (1, 8, 8, 16)

    def test_equals_dense_composition(self):
        """Depthwise+pointwise equals the dense-conv composition oracle."""
        rng = np.random.default_rng(4)
        x = t64(rng.normal(size=(1, 5, 5, 2)))
        dw = rng.normal(size=(3, 3, 2))
        pw = rng.normal(size=(1, 1, 2, 5))
        got = T.separable_conv2d(x, t64(dw), t64(pw))

        # Oracle: embed the depthwise filters into a block-diagonal dense
        # kernel, then run two dense convolutions.
        dense = np.zeros((3, 3, 2, 2))
        for c in range(2):
            dense[:, :, c, c] = dw[:, :, c]
        mid = T.conv2d(x, t64(dense))
        want = T.conv2d(mid, t64(pw))
        np.testing.assert_allclose(got.data, want.data, rtol=1e-6)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.ones((1, 4, 4, 3), dtype=np.float32))
        dw = Tensor(np.ones((3, 3, 3), dtype=np.float32))
        pw = Tensor(np.ones((1, 1, 2, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            T.separable_conv2d(x, dw, pw)

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        dw = t64(rng.normal(size=(3, 3, 2)))
        pw = t64(rng.normal(size=(1, 1, 2, 3)))
        x = t64(rng.normal(size=(1, 4, 4, 2)))

        def f(v):
            return T.sum_all(T.square(T.separable_conv2d(v, dw, pw)))

        assert finite_diff_check(f, x) < 1e-7


class TestPool2d:
    def test_max_2x2(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]],
                            dtype=np.float32).reshape(1, 2, 2, 1))
        y = T.pool2d(x, "max", 2, 2)
        assert y.data.reshape(()) == 4.0

    def test_sum_2x2_stride1_uniform(self):
        """Uniform 4x4 plane of 1/16: every 2x2 window sums to 0.25."""
        x = Tensor(np.full((1, 4, 4, 1), 1.0 / 16.0, dtype=np.float32))
        y = T.pool2d(x, "sum", 2, 1, padding="valid")
        assert y.data.shape == (1, 3, 3, 1)
        np.testing.assert_allclose(y.data, 0.25, rtol=1e-6)

    def test_max_3x3_stride2_same_shape(self):
        x = Tensor(np.zeros((1, 128, 128, 2), dtype=np.float32))
        assert T.pool2d(x, "max", 3, 2).data.shape == (1, 64, 64, 2)

    def test_window_too_large_rejected(self):
        x = Tensor(np.zeros((1, 2, 2, 1), dtype=np.float32))
        with pytest.raises(ValueError, match="larger"):
            T.pool2d(x, "max", 3, 1)

    def test_max_routes_gradient_to_argmax(self):
        x = t64(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
        with Tape() as tape:
            y = T.pool2d(x, "max", 2, 2)
            loss = T.sum_all(y)
        g = backward(tape, loss).of(x)
        np.testing.assert_array_equal(
            g.reshape(2, 2), [[0.0, 0.0], [0.0, 1.0]])

    def test_max_tie_break_first_row_major(self):
        x = t64(np.full((1, 2, 2, 1), 7.0))
        with Tape() as tape:
            loss = T.sum_all(T.pool2d(x, "max", 2, 2))
        g = backward(tape, loss).of(x)
        np.testing.assert_array_equal(
            g.reshape(2, 2), [[1.0, 0.0], [0.0, 0.0]])

    def test_sum_distributes_gradient(self):
        x = t64(np.zeros((1, 3, 3, 1)))
        with Tape() as tape:
            loss = T.sum_all(T.pool2d(x, "sum", 2, 1, padding="valid"))
        g = backward(tape, loss).of(x).reshape(3, 3)
        # Membership counts of each cell over the four 2x2 windows.
        np.testing.assert_array_equal(
            g, [[1, 2, 1], [2, 4, 2], [1, 2, 1]])

    def test_gradcheck_both_kinds(self):
        rng = np.random.default_rng(6)
        x = t64(rng.normal(size=(1, 6, 6, 2)))
        for kind in ("max", "sum"):
            def f(v, _kind=kind):
                return T.sum_all(T.square(T.pool2d(v, _kind, 3, 2)))
            assert finite_diff_check(f, x) < 1e-6


class TestUpsample2x:
    def test_replication_pattern(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]],
                            dtype=np.float32).reshape(1, 2, 2, 1))
        y = T.upsample2x(x).data.reshape(4, 4)
        np.testing.assert_array_equal(
            y, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_gradient_counts_children(self):
        x = t64(np.zeros((1, 2, 2, 1)))
        with Tape() as tape:
            loss = T.sum_all(T.upsample2x(x))
        g = backward(tape, loss).of(x)
        np.testing.assert_array_equal(g, np.full((1, 2, 2, 1), 4.0))

    def test_shape_roundtrip_with_pool(self):
        x = Tensor(np.zeros((1, 8, 6, 3), dtype=np.float32))
        down = T.pool2d(x, "max", 2, 2)
        assert T.upsample2x(down).data.shape == x.data.shape


class TestChannelNorm:
    def test_frozen_constant_channel_zeros(self):
        x = Tensor(np.full((1, 3, 3, 1), 2.5, dtype=np.float32))
        running = NormState(1)
        running.mean[:] = 2.5
        running.var[:] = 1.0
        y = T.channel_norm(x, Tensor(np.ones(1, dtype=np.float32)),
                           Tensor(np.zeros(1, dtype=np.float32)),
                           "frozen", running)
        np.testing.assert_allclose(y.data, 0.0, atol=1e-6)

    def test_zero_scale_gives_shift(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 3, 3, 2)).astype(np.float32))
        y = T.channel_norm(x, Tensor(np.zeros(2, dtype=np.float32)),
                           Tensor(np.array([1.5, -2.0], dtype=np.float32)),
                           "batch")
        np.testing.assert_allclose(y.data[..., 0], 1.5, atol=1e-6)
        np.testing.assert_allclose(y.data[..., 1], -2.0, atol=1e-6)

    def test_batch_statistics_against_independent_accumulation(self):
        """Standardized output re-checked with math.fsum accumulation."""
        import math
        rng = np.random.default_rng(8)
        x = rng.normal(1.7, 2.3, size=(8, 4, 4, 2))
        y = T.channel_norm(t64(x), t64(np.ones(2)), t64(np.zeros(2)),
                           "batch").data
        for c in range(2):
            vals = [float(v) for v in y[..., c].reshape(-1)]
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
            assert abs(mean) < 1e-6
            assert abs(var - 1.0) < 1e-4

    def test_single_element_statistics_rejected(self):
        x = Tensor(np.ones((1, 1, 1, 3), dtype=np.float32))
        with pytest.raises(ValueError, match="single"):
            T.channel_norm(x, Tensor(np.ones(3, dtype=np.float32)),
                           Tensor(np.zeros(3, dtype=np.float32)), "batch")

    def test_running_update_momentum(self):
        rng = np.random.default_rng(9)
        x = rng.normal(3.0, 2.0, size=(4, 4, 4, 1))
        running = NormState(1, dtype=np.float64)
        T.channel_norm(t64(x), t64(np.ones(1)), t64(np.zeros(1)), "batch",
                       running, update_running=True)
        m = x.mean()
        v = x.var()
        np.testing.assert_allclose(running.mean, 0.99 * 0.0 + 0.01 * m,
                                   rtol=1e-12)
        np.testing.assert_allclose(running.var, 0.99 * 1.0 + 0.01 * v,
                                   rtol=1e-12)

    def test_gradcheck_batch_and_frozen(self):
        # The probe contracts the output with random weights: a plain
        # sum of squares of a standardized output is almost constant in
        # the input and makes a degenerate check.
        rng = np.random.default_rng(10)
        x0 = t64(rng.normal(size=(2, 3, 3, 2)))
        scale = t64(rng.normal(size=2))
        shift = t64(rng.normal(size=2))
        probe = Tensor(rng.normal(size=(2, 3, 3, 2)), dtype=np.float64)
        running = NormState(2, dtype=np.float64)
        running.mean[:] = rng.normal(size=2)
        running.var[:] = rng.uniform(0.5, 2.0, size=2)
        for mode in ("batch", "frozen"):
            def f(v, _mode=mode):
                y = T.channel_norm(v, scale, shift, _mode, running)
                return T.sum_all(T.square(T.mul(y, probe)))
            assert finite_diff_check(f, x0, step=1e-5) < 1e-5

        def f_scale(s):
            return T.sum_all(T.square(T.mul(
                T.channel_norm(x0, s, shift, "batch", running), probe)))

        assert finite_diff_check(f_scale, scale) < 1e-5


class TestActivation:
    def test_relu_values(self):
        x = Tensor(np.array([-3.0, 0.0, 5.0], dtype=np.float32))
        np.testing.assert_array_equal(T.relu(x).data, [0.0, 0.0, 5.0])

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor(np.zeros(1, dtype=np.float32))).data[0] == 0.5

    def test_sigmoid_gradient_matches_finite_difference(self):
        """d sigmoid / dx at 0 is exactly 0.25 (checked to 1e-8)."""
        x = t64([0.0])
        with Tape() as tape:
            loss = T.sum_all(T.sigmoid(x))
        g = backward(tape, loss).of(x)[0]
        step = 1e-6
        num = (1 / (1 + np.exp(-step)) - 1 / (1 + np.exp(step))) / (2 * step)
        assert abs(g - 0.25) < 1e-12
        assert abs(g - num) < 1e-8

    def test_sigmoid_extreme_inputs_finite(self):
        x = Tensor(np.array([-500.0, 500.0], dtype=np.float32))
        y = T.sigmoid(x).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, [0.0, 1.0], atol=1e-7)

    def test_relu_gradient_zero_at_zero(self):
        x = t64([-1.0, 0.0, 2.0])
        with Tape() as tape:
            loss = T.sum_all(T.relu(x))
        g = backward(tape, loss).of(x)
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="activation"):
            T.activation(Tensor(np.zeros(1, dtype=np.float32)), "tanh")


class TestSpatialSoftmax:
    def test_uniform_plane(self):
        x = Tensor(np.full((1, 3, 5, 1), 2.2, dtype=np.float32))
        np.testing.assert_allclose(T.spatial_softmax(x).data, 1.0 / 15.0,
                                   rtol=1e-6)

    def test_ln3_plane(self):
        h = t64(np.array([[0.0, 0.0], [0.0, np.log(3.0)]])
                .reshape(1, 2, 2, 1))
        p = T.spatial_softmax(h).data.reshape(2, 2)
        np.testing.assert_allclose(
            p, [[1 / 6, 1 / 6], [1 / 6, 1 / 2]], rtol=1e-12)

    def test_spike_saturates(self):
        h = np.zeros((1, 4, 4, 1), dtype=np.float32)
        h[0, 2, 1, 0] = 50.0
        p = T.spatial_softmax(Tensor(h)).data
        assert p[0, 2, 1, 0] >= 1.0 - 1e-6

    def test_shift_invariance(self):
        rng = np.random.default_rng(11)
        h = rng.normal(size=(2, 5, 5, 3))
        base = T.spatial_softmax(t64(h)).data
        for c in (-100.0, 3.7, 1e5):
            shifted = T.spatial_softmax(t64(h + c)).data
            np.testing.assert_allclose(shifted, base, atol=1e-6)

    def test_normalization_invariant(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            h = rng.normal(scale=rng.uniform(0.1, 20),
                           size=(1, 4, 6, 2))
            p = T.spatial_softmax(t64(h)).data
            assert p.min() >= 0.0
            np.testing.assert_allclose(p.sum(axis=(1, 2)), 1.0, atol=1e-6)

    def test_gradcheck(self):
        rng = np.random.default_rng(13)
        x = t64(rng.normal(size=(1, 4, 4, 2)))
        ramp = rng.normal(size=(4, 4))

        def f(v):
            return T.sum_all(T.square(T.plane_dot(T.spatial_softmax(v),
                                                  ramp)))

        assert finite_diff_check(f, x) < 1e-6


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t64(np.arange(6).reshape(2, 3))
        with Tape() as tape:
            loss = T.sum_all(x)
        np.testing.assert_array_equal(backward(tape, loss).of(x),
                                      np.ones((2, 3)))

    def test_sum_of_squares_gradient(self):
        x = t64([1.0, 2.0, 3.0])
        with Tape() as tape:
            loss = T.sum_all(T.mul(x, x))
        np.testing.assert_array_equal(backward(tape, loss).of(x),
                                      [2.0, 4.0, 6.0])

    def test_composite_graph_matches_finite_differences(self):
        """conv -> softmax -> soft-argmax -> L2, checked end to end."""
        from pyrapose.heads import soft_argmax_2d
        rng = np.random.default_rng(14)
        w = t64(rng.normal(size=(3, 3, 1, 2)))
        target = rng.uniform(0.2, 0.8, size=(1, 2, 2))

        def f(x):
            h = T.conv2d(x, w)
            xy = soft_argmax_2d(h)
            d = T.sub(xy, Tensor(target, dtype=np.float64))
            return T.sum_all(T.square(d))

        x = t64(rng.normal(size=(1, 8, 8, 1)))
        assert finite_diff_check(f, x, step=1e-6) < 1e-5

    def test_loss_not_on_tape_rejected(self):
        x = t64([1.0])
        loss = T.sum_all(x)  # built outside any tape
        with Tape() as tape:
            T.sum_all(x)
        with pytest.raises(TapeError, match="not produced"):
            backward(tape, loss)

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0])
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(TapeError, match="scalar"):
            backward(tape, y)

    def test_unreachable_parameter_has_zero_gradient(self):
        x = t64([1.0, 2.0])
        unused = t64([5.0])
        with Tape() as tape:
            loss = T.sum_all(T.square(x))
        g = backward(tape, loss)
        assert not g.has(unused)
        np.testing.assert_array_equal(g.of(unused), [0.0])

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(15)
        xd = rng.normal(size=(2, 4, 4, 3))
        wd = rng.normal(size=(3, 3, 3, 4))

        def run():
            x = t64(xd)
            w = t64(wd)
            with Tape() as tape:
                y = T.relu(T.conv2d(x, w, stride=2))
                loss = T.sum_all(T.square(y))
            g = backward(tape, loss)
            return y.data.copy(), g.of(x).copy(), g.of(w).copy()

        a = run()
        b = run()
        for u, v in zip(a, b):
            assert np.array_equal(u, v)

    def test_gradient_accumulates_over_reuse(self):
        x = t64([3.0])
        with Tape() as tape:
            y = T.add(T.mul(x, x), x)  # x^2 + x
            loss = T.sum_all(y)
        np.testing.assert_allclose(backward(tape, loss).of(x), [7.0])


class TestFiniteDiffCheck:
    def test_sum_of_squares_tight(self):
        rng = np.random.default_rng(16)
        x = t64(rng.normal(size=(3, 3)))

        def f(v):
            return T.sum_all(T.square(v))

        assert finite_diff_check(f, x) < 1e-7

    def test_constant_function_zero_error(self):
        x = t64(np.ones(4))

        def f(v):
            return T.sum_all(T.mul(v, Tensor(np.zeros(4), dtype=np.float64)))

        assert finite_diff_check(f, x) == 0.0

    def test_softmax_ramp_composition(self):
        """The soft-argmax building block checked coordinatewise."""
        rng = np.random.default_rng(17)
        x = t64(rng.normal(size=(1, 8, 8, 1)))
        ramp = (2.0 * np.arange(1, 9) - 1.0) / 16.0
        plane = np.broadcast_to(ramp[None, :], (8, 8)).copy()

        # Step chosen at the truncation/roundoff balance: coordinates
        # with near-zero gradients are noise-floored at smaller steps.
        def f(v):
            return T.sum_all(T.plane_dot(T.spatial_softmax(v), plane))

        assert finite_diff_check(f, x, step=1e-4) < 1e-6

    def test_non_scalar_rejected(self):
        x = t64(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            finite_diff_check(lambda v: T.mul(v, v), x)

    def test_float32_rejected(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        with pytest.raises(ValueError, match="float64"):
            finite_diff_check(lambda v: T.sum_all(v), x)

    def test_coordinate_sampling(self):
        rng = np.random.default_rng(18)
        x = t64(rng.normal(size=(10, 10)))

        def f(v):
            return T.sum_all(T.square(v))

        err = finite_diff_check(f, x, sample=5,
                                rng=np.random.default_rng(0))
        assert err < 1e-6
