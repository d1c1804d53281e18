import numpy as np
import pytest

from conftest import rand_tensor
from mcfnet import ops
from mcfnet.ops import RunningStats
from mcfnet.tensor import ShapeError, Tensor, backward
from reference_impl import bilinear_ref, conv2d_ref


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rand_tensor(rng, (2, 1, 5, 5))
        w = Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64)
        out = ops.conv2d(x, w)
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape_formula_stem(self, rng):
        # 7x7 stride-2 pad-3 halves a 512 extent to 256
        x = rand_tensor(rng, (1, 1, 512, 8), dtype=np.float32)
        w = rand_tensor(rng, (1, 1, 7, 7), dtype=np.float32)
        out = ops.conv2d(x, w, stride=2, padding=3)
        assert out.shape == (1, 1, 256, 4)

    def test_sliding_window_sum_oracle(self, rng):
        x = rand_tensor(rng, (1, 1, 4, 4))
        w = Tensor(np.ones((1, 1, 3, 3)), dtype=np.float64)
        out = ops.conv2d(x, w, stride=1, padding=0)
        assert out.shape == (1, 1, 2, 2)
        expected = np.zeros((1, 1, 2, 2))
        for i in range(2):
            for j in range(2):
                expected[0, 0, i, j] = x.data[0, 0, i:i + 3, j:j + 3].sum()
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 3)])
    def test_against_loop_reference(self, rng, stride, padding):
        x = rand_tensor(rng, (2, 3, 6, 5))
        w = rand_tensor(rng, (4, 3, 3, 3))
        b = rand_tensor(rng, (4,))
        out = ops.conv2d(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv2d_ref(x.data, w.data, b.data, stride, padding),
                                   atol=1e-12)

    def test_linearity(self, rng):
        w = rand_tensor(rng, (2, 2, 3, 3))
        x = rand_tensor(rng, (1, 2, 5, 5))
        y = rand_tensor(rng, (1, 2, 5, 5))
        a, b = 0.7, -1.3
        combo = Tensor(a * x.data + b * y.data, dtype=np.float64)
        lhs = ops.conv2d(combo, w, padding=1).data
        rhs = a * ops.conv2d(x, w, padding=1).data + b * ops.conv2d(y, w, padding=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_channel_mismatch_rejected(self, rng):
        x = rand_tensor(rng, (1, 3, 4, 4))
        w = rand_tensor(rng, (2, 4, 3, 3))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w, padding=1)

    def test_kernel_larger_than_padded_input_rejected(self, rng):
        x = rand_tensor(rng, (1, 1, 2, 2))
        w = rand_tensor(rng, (1, 1, 5, 5))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w)


class TestBatchNorm:
    def test_normalizes_batch(self, rng):
        x = rand_tensor(rng, (2, 3, 4, 4), scale=3.0)
        gamma = Tensor(np.ones(3), dtype=np.float64)
        beta = Tensor(np.zeros(3), dtype=np.float64)
        out = ops.batch_norm2d(x, gamma, beta, RunningStats(3, np.float64), training=True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_constant_input_maps_to_zero(self):
        x = Tensor(np.full((2, 2, 3, 3), 7.5), dtype=np.float64)
        gamma = Tensor(np.ones(2), dtype=np.float64)
        beta = Tensor(np.zeros(2), dtype=np.float64)
        out = ops.batch_norm2d(x, gamma, beta, None, training=True)
        np.testing.assert_array_equal(out.data, np.zeros_like(x.data))

    def test_two_pass_reference(self, rng):
        x = rand_tensor(rng, (2, 3, 4, 4), scale=2.0)
        gamma = rand_tensor(rng, (3,))
        beta = rand_tensor(rng, (3,))
        eps = 1e-5
        out = ops.batch_norm2d(x, gamma, beta, None, training=True, eps=eps)
        # straight-line two-pass mean/variance reference
        expected = np.empty_like(x.data)
        for c in range(3):
            vals = x.data[:, c]
            mu = vals.sum() / vals.size
            var = ((vals - mu) ** 2).sum() / vals.size
            expected[:, c] = gamma.data[c] * (vals - mu) / np.sqrt(var + eps) + beta.data[c]
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_eval_before_any_update_uses_init_stats(self, rng):
        x = rand_tensor(rng, (1, 2, 3, 3))
        gamma = Tensor(np.ones(2), dtype=np.float64)
        beta = Tensor(np.zeros(2), dtype=np.float64)
        eps = 1e-5
        out = ops.batch_norm2d(x, gamma, beta, RunningStats(2, np.float64), training=False, eps=eps)
        np.testing.assert_allclose(out.data, x.data / np.sqrt(1.0 + eps), atol=1e-12)

    def test_running_stats_updated(self, rng):
        x = rand_tensor(rng, (2, 2, 4, 4), scale=2.0)
        stats = RunningStats(2, np.float64)
        gamma = Tensor(np.ones(2), dtype=np.float64)
        beta = Tensor(np.zeros(2), dtype=np.float64)
        ops.batch_norm2d(x, gamma, beta, stats, training=True, momentum=0.1)
        mean = x.data.mean(axis=(0, 2, 3))
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        unbiased = x.data.var(axis=(0, 2, 3)) * m / (m - 1)
        np.testing.assert_allclose(stats.mean, 0.1 * mean, atol=1e-12)
        np.testing.assert_allclose(stats.var, 0.9 * 1.0 + 0.1 * unbiased, atol=1e-12)

    def test_training_needs_two_positions(self, rng):
        x = rand_tensor(rng, (1, 2, 1, 1))
        gamma = Tensor(np.ones(2), dtype=np.float64)
        beta = Tensor(np.zeros(2), dtype=np.float64)
        with pytest.raises(ShapeError):
            ops.batch_norm2d(x, gamma, beta, None, training=True)


class TestBilinearResize:
    def test_identity_size(self, rng):
        x = rand_tensor(rng, (1, 2, 5, 7))
        out = ops.bilinear_resize(x, 5, 7)
        np.testing.assert_array_equal(out.data, x.data)

    def test_constant_preserved(self):
        for target in ((8, 8), (2, 2), (13, 5)):
            x = Tensor(np.full((1, 1, 4, 4), 0.37), dtype=np.float64)
            out = ops.bilinear_resize(x, *target)
            np.testing.assert_allclose(out.data, 0.37, atol=1e-15)

    def test_constant_mean_exact_at_power_of_two_scales(self):
        # the network's own x2 / x4 / x8 factors preserve constants bit-exactly,
        # so the global mean (taken with exact summation) is preserved exactly
        import math
        for in_size, out_size in ((4, 8), (8, 4), (8, 64), (64, 8), (2, 4)):
            x = Tensor(np.full((1, 1, in_size, in_size), 1 / 3), dtype=np.float64)
            out = ops.bilinear_resize(x, out_size, out_size)
            assert (out.data == 1 / 3).all()
            assert math.fsum(out.data.ravel()) / out.data.size == \
                math.fsum(x.data.ravel()) / x.data.size

    def test_2x2_to_4x4_against_scalar_oracle(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None], dtype=np.float64)
        out = ops.bilinear_resize(x, 4, 4)
        np.testing.assert_allclose(out.data, bilinear_ref(x.data, 4, 4), atol=1e-12)

    @pytest.mark.parametrize("target", [(2, 3), (7, 7), (8, 2)])
    def test_random_against_scalar_oracle(self, rng, target):
        x = rand_tensor(rng, (2, 2, 4, 5))
        out = ops.bilinear_resize(x, *target)
        np.testing.assert_allclose(out.data, bilinear_ref(x.data, *target), atol=1e-12)


class TestPointwise:
    def test_sigmoid_and_relu_values(self):
        assert ops.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
        assert ops.relu(Tensor(np.array([-3.0]))).data[0] == 0.0

    def test_sigmoid_extreme_inputs_stable(self):
        x = Tensor(np.array([-1e4, -50.0, 50.0, 1e4]), dtype=np.float64)
        out = ops.sigmoid(x).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 0.0, 1.0, 1.0], atol=1e-20)

    def test_concat_channel_arithmetic(self, rng):
        a = rand_tensor(rng, (1, 8, 4, 4))
        b = rand_tensor(rng, (1, 4, 4, 4))
        out = ops.concat_channels(a, b)
        assert out.shape == (1, 12, 4, 4)

    def test_concat_then_slice_is_identity(self, rng):
        a = rand_tensor(rng, (2, 3, 4, 4))
        b = rand_tensor(rng, (2, 5, 4, 4))
        cat = ops.concat_channels(a, b)
        np.testing.assert_array_equal(ops.slice_channels(cat, 0, 3).data, a.data)
        np.testing.assert_array_equal(ops.slice_channels(cat, 3, 8).data, b.data)

    def test_concat_requires_matching_spatial(self, rng):
        with pytest.raises(ShapeError):
            ops.concat_channels(rand_tensor(rng, (1, 2, 4, 4)), rand_tensor(rng, (1, 2, 4, 5)))

    def test_global_avg_pool_value(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None], dtype=np.float64)
        out = ops.global_avg_pool(x)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 2.5

    def test_gate_broadcast_allowed(self, rng):
        gate = rand_tensor(rng, (2, 3, 1, 1))
        fmap = rand_tensor(rng, (2, 3, 4, 4))
        np.testing.assert_allclose(ops.mul(gate, fmap).data, gate.data * fmap.data)
        np.testing.assert_allclose(ops.add(fmap, gate).data, fmap.data + gate.data)

    @pytest.mark.parametrize("shape_a,shape_b", [
        ((1, 3, 4, 4), (1, 1, 4, 4)),   # channel broadcast
        ((1, 3, 4, 4), (1, 3, 4, 1)),   # row broadcast
        ((2, 3, 1, 1), (1, 3, 4, 4)),   # batch broadcast
        ((1, 3, 4, 4), (3, 4, 4)),      # rank mismatch
    ])
    def test_other_broadcasts_rejected(self, rng, shape_a, shape_b):
        a, b = rand_tensor(rng, shape_a), rand_tensor(rng, shape_b)
        with pytest.raises(ShapeError):
            ops.mul(a, b)
        with pytest.raises(ShapeError):
            ops.add(a, b)


class TestFiniteChecking:
    def test_nonfinite_forward_raises_when_enabled(self, rng):
        from mcfnet.tensor import NonFiniteError, set_check_finite
        x = Tensor(np.array([1e308]), dtype=np.float64)
        with np.errstate(over="ignore"):
            set_check_finite(True)
            try:
                with pytest.raises(NonFiniteError):
                    ops.mul(x, x)  # overflows to inf
            finally:
                set_check_finite(False)
            assert np.isinf(ops.mul(x, x).data).any()  # silent when disabled
