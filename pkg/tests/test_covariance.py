import numpy as np
import pytest

from conftest import rand_tensor
from mcfnet import ops
from mcfnet.covariance import CFFM, CFRM, AdjustmentBlock, LGate, channel_covariance
from mcfnet.modules import init_parameters
from mcfnet.tensor import ShapeError, Tensor
from reference_impl import adjust_ref, cffm_ref, cfrm_ref, covariance_ref, lgate_ref


def _zero_params(module):
    for _, p in module.named_parameters():
        p.data = np.zeros_like(p.data)


def _f64(module):
    return module.to_dtype(np.float64)


class TestChannelCovariance:
    def test_constant_x_gives_zero(self, rng):
        x = Tensor(np.full((1, 2, 3, 3), 4.2), dtype=np.float64)
        y = rand_tensor(rng, (1, 2, 3, 3))
        out = channel_covariance(x, y)
        np.testing.assert_array_equal(out.data, np.zeros((1, 2, 1, 1)))

    def test_line_fixtures_against_loop_oracle(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3), dtype=np.float64)
        y_same = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3), dtype=np.float64)
        y_flip = Tensor(np.array([3.0, 2.0, 1.0]).reshape(1, 1, 1, 3), dtype=np.float64)
        same = channel_covariance(x, y_same).data[0, 0, 0, 0]
        flip = channel_covariance(x, y_flip).data[0, 0, 0, 0]
        assert same == 1.0 and flip == -1.0
        np.testing.assert_allclose(same, covariance_ref(x.data, y_same.data)[0, 0, 0, 0], atol=1e-15)
        np.testing.assert_allclose(flip, covariance_ref(x.data, y_flip.data)[0, 0, 0, 0], atol=1e-15)

    def test_random_against_loop_oracle(self, rng):
        x = rand_tensor(rng, (2, 3, 4, 5))
        y = rand_tensor(rng, (2, 3, 4, 5))
        out = channel_covariance(x, y)
        np.testing.assert_allclose(out.data, covariance_ref(x.data, y.data), atol=1e-10)

    def test_symmetry_bit_exact(self, rng):
        x = rand_tensor(rng, (2, 4, 5, 5))
        y = rand_tensor(rng, (2, 4, 5, 5))
        assert np.array_equal(channel_covariance(x, y).data, channel_covariance(y, x).data)

    def test_self_covariance_is_unbiased_variance(self, rng):
        x = rand_tensor(rng, (3, 4, 6, 6), scale=2.5)
        out = channel_covariance(x, x).data
        assert (out >= 0).all()
        expected = x.data.var(axis=(2, 3), ddof=1)[..., None, None]
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_bilinearity_under_scaling(self, rng):
        x = rand_tensor(rng, (1, 3, 4, 4))
        y = rand_tensor(rng, (1, 3, 4, 4))
        for alpha, beta in ((2.0, -0.5), (0.3, 7.0)):
            lhs = channel_covariance(Tensor(alpha * x.data, dtype=np.float64),
                                     Tensor(beta * y.data, dtype=np.float64)).data
            rhs = alpha * beta * channel_covariance(x, y).data
            np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_too_few_positions_rejected(self, rng):
        x = rand_tensor(rng, (1, 2, 1, 1))
        with pytest.raises(ShapeError):
            channel_covariance(x, x)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            channel_covariance(rand_tensor(rng, (1, 2, 3, 3)), rand_tensor(rng, (1, 2, 3, 4)))


class TestAdjustmentBlock:
    def test_zero_weights_map_to_zero(self, rng):
        block = AdjustmentBlock(4, reduction=2)
        _zero_params(block)
        _f64(block)
        v = rand_tensor(rng, (2, 4, 1, 1))
        np.testing.assert_array_equal(block(v).data, np.zeros((2, 4, 1, 1)))

    def test_output_shape_matches_input(self, rng):
        block = _f64(init_parameters(AdjustmentBlock(6, reduction=3), seed=0))
        v = rand_tensor(rng, (3, 6, 1, 1))
        assert block(v).shape == (3, 6, 1, 1)

    def test_against_dense_matrix_reference(self, rng):
        block = _f64(init_parameters(AdjustmentBlock(4, reduction=2), seed=5))
        v = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1), dtype=np.float64)
        out = block(v)
        # dense matrix-multiply reference: 1x1 convs on 1x1 maps are matmuls
        w1 = block.reduce.weight.data.reshape(2, 4)
        b1 = block.reduce.bias.data
        w2 = block.expand.weight.data.reshape(4, 2)
        b2 = block.expand.bias.data
        hidden = np.maximum(w1 @ v.data.reshape(4) + b1, 0.0)
        expected = (w2 @ hidden + b2).reshape(1, 4, 1, 1)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)
        np.testing.assert_allclose(out.data, adjust_ref(v.data, block), atol=1e-12)

    def test_channel_mismatch_rejected(self, rng):
        block = AdjustmentBlock(4, reduction=2)
        with pytest.raises(ShapeError):
            block(rand_tensor(rng, (1, 5, 1, 1)))


class TestCFFM:
    def test_output_shape_contract(self, rng):
        m = _f64(init_parameters(CFFM(8, 4, 8, reduction=4), seed=1))
        out = m(rand_tensor(rng, (1, 8, 8, 8)), rand_tensor(rng, (1, 4, 32, 32)))
        assert out.shape == (1, 12, 32, 32)

    def test_zero_mask_path_gives_half_gates(self, rng):
        m = _f64(CFFM(3, 2, 4, reduction=2))
        init_parameters(m, seed=2)
        _f64(m)
        for sub in (m.adjust_high, m.adjust_low, m.mask_high, m.mask_low):
            _zero_params(sub)
        x_h = rand_tensor(rng, (1, 3, 4, 4))
        x_l = rand_tensor(rng, (1, 2, 8, 8))
        out = m(x_h, x_l)
        up_half = ops.bilinear_resize(ops.scale(x_h, 0.5), 8, 8).data
        expected = np.concatenate([up_half, 0.5 * x_l.data], axis=1)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @pytest.mark.parametrize("prose", [False, True])
    def test_against_straight_line_oracle(self, rng, prose):
        m = _f64(init_parameters(CFFM(2, 2, 2, reduction=2, prose_variant=prose), seed=3))
        x_h = rand_tensor(rng, (1, 2, 2, 2))
        x_l = rand_tensor(rng, (1, 2, 4, 4))
        out = m(x_h, x_l)
        np.testing.assert_allclose(out.data, cffm_ref(x_h.data, x_l.data, m), atol=1e-5)

    def test_gate_values_strictly_inside_unit_interval(self, rng):
        m = _f64(init_parameters(CFFM(3, 2, 4, reduction=2), seed=4))
        ph = m.proj_high(rand_tensor(rng, (1, 3, 4, 4)))
        pl_down = ops.bilinear_resize(m.proj_low(rand_tensor(rng, (1, 2, 8, 8))), 4, 4)
        gate = ops.sigmoid(m.mask_high(m.adjust_high(channel_covariance(ph, pl_down))))
        assert np.all(gate.data > 0) and np.all(gate.data < 1)

    def test_resolution_order_enforced(self, rng):
        m = init_parameters(CFFM(2, 2, 2, reduction=2), seed=0)
        with pytest.raises(ShapeError):
            m(rand_tensor(rng, (1, 2, 8, 8), dtype=np.float32),
              rand_tensor(rng, (1, 2, 4, 4), dtype=np.float32))

    def test_conv3x3_on_1x1_map_equals_center_tap_1x1(self, rng):
        # the mask convs act on 1x1 covariance maps: only the center tap counts
        m = _f64(init_parameters(CFFM(3, 2, 4, reduction=2), seed=6))
        v = rand_tensor(rng, (2, 4, 1, 1))
        full = m.mask_high(v)
        center = ops.conv2d(v, Tensor(m.mask_high.weight.data[:, :, 1:2, 1:2], dtype=np.float64),
                            m.mask_high.bias, stride=1, padding=0)
        np.testing.assert_allclose(full.data, center.data, atol=1e-12)


class TestCFRM:
    def test_output_shape_matches_input(self, rng):
        m = _f64(init_parameters(CFRM(5, reduction=5), seed=1))
        x = rand_tensor(rng, (2, 5, 6, 7))
        assert m(x).shape == (2, 5, 6, 7)

    def test_constant_input_zero_gate_path(self, rng):
        m = _f64(init_parameters(CFRM(3, reduction=3), seed=2))
        for sub in (m.adjust, m.mask):
            _zero_params(sub)
        x = Tensor(np.broadcast_to(np.array([1.0, -2.0, 0.5])[:, None, None], (3, 4, 4)).copy()[None],
                   dtype=np.float64)
        out = m(x)
        refined = ops.conv2d(x, m.refine.weight, m.refine.bias, padding=1)
        np.testing.assert_allclose(out.data, 0.5 * refined.data, atol=1e-12)

    def test_against_straight_line_oracle(self, rng):
        m = _f64(init_parameters(CFRM(3, reduction=3), seed=3))
        x = rand_tensor(rng, (1, 3, 4, 4))
        np.testing.assert_allclose(m(x).data, cfrm_ref(x.data, m), atol=1e-5)


class TestLGate:
    def _build(self, seed=0):
        return _f64(init_parameters(LGate(2, 2, 2, 4), seed=seed))

    def _inputs(self, rng):
        return (rand_tensor(rng, (1, 2, 8, 8)), rand_tensor(rng, (1, 2, 4, 4)),
                rand_tensor(rng, (1, 2, 2, 2)))

    def test_zero_input_silences_its_gate_weights(self, rng):
        m = self._build()
        _, x2, x3 = self._inputs(rng)
        x1 = Tensor(np.zeros((1, 2, 8, 8)), dtype=np.float64)
        # zero the harmonize bias so the branch value is exactly zero
        m.harmonize[0].bias.data = np.zeros_like(m.harmonize[0].bias.data)
        out_a = m(x1, x2, x3).data
        m.gates[0].weight.data = m.gates[0].weight.data + 3.0  # perturb the silenced gate
        out_b = m(x1, x2, x3).data
        np.testing.assert_array_equal(out_a, out_b)

    def test_zero_gate_weights_halve_each_branch(self, rng):
        m = self._build(seed=1)
        for g in m.gates:
            _zero_params(g)
        x1, x2, x3 = self._inputs(rng)
        out = m(x1, x2, x3)
        branches = [ops.bilinear_resize(conv(x), 8, 8) for conv, x in
                    zip(m.harmonize, (x1, x2, x3))]
        halves = [ops.scale(b, 0.5) for b in branches]
        expected = m.fuse(ops.concat_channels(ops.add(halves[0], halves[1]), halves[2]))
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12)

    def test_against_straight_line_oracle(self, rng):
        m = self._build(seed=2)
        x1, x2, x3 = self._inputs(rng)
        np.testing.assert_allclose(m(x1, x2, x3).data, lgate_ref(x1.data, x2.data, x3.data, m),
                                   atol=1e-5)

    def test_gate_attenuates_elementwise(self, rng):
        m = self._build(seed=3)
        x1, x2, x3 = self._inputs(rng)
        r = ops.bilinear_resize(m.harmonize[0](x1), 8, 8)
        f = ops.mul(r, ops.sigmoid(m.gates[0](r)))
        assert np.all(np.abs(f.data) <= np.abs(r.data))

    def test_scale_ratio_mismatch_rejected(self, rng):
        m = self._build()
        with pytest.raises(ShapeError):
            m(rand_tensor(rng, (1, 2, 8, 8)), rand_tensor(rng, (1, 2, 8, 8)),
              rand_tensor(rng, (1, 2, 2, 2)))
