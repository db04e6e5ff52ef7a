"""Oracle tests for the numeric building blocks.

The convolution reference below is a deliberately naive quadruple loop,
structurally unrelated to either production backend (im2col/GEMM and
compiled loops), so agreement is meaningful. Gradients are additionally
checked against central finite differences in float64.
"""

import numpy as np
import pytest

from relief import ops
from relief.backend import _numba_available
from relief.errors import NumericError


def conv_reference(x, w, b):
    """Direct same-padded 3x3 convolution, one multiply at a time."""
    n, ci, h, wd = x.shape
    co = w.shape[0]
    out = np.zeros((n, co, h, wd), dtype=np.float64)
    for k in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(wd):
                    acc = float(b[o])
                    for i in range(ci):
                        for dy in (-1, 0, 1):
                            for dx in (-1, 0, 1):
                                yy, xc = y + dy, xx + dx
                                if 0 <= yy < h and 0 <= xc < wd:
                                    acc += float(x[k, i, yy, xc]) * float(w[o, i, dy + 1, dx + 1])
                    out[k, o, y, xx] = acc
    return out


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at float64 array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f()
        flat[i] = keep - eps
        lo = f()
        flat[i] = keep
        gf[i] = (hi - lo) / (2 * eps)
    return g


class TestConvForward:
    def test_identity_kernel_passes_input_through(self):
        x = np.arange(12.0, dtype=np.float32).reshape(1, 1, 3, 4)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        b = np.array([5.0], dtype=np.float32)
        y = ops.conv2d_forward(x, ops.ConvParams(w, b))
        assert np.array_equal(y, x + 5.0)

    def test_box_kernel_edge_counts(self):
        # all-ones input and kernel with zero padding: output counts the
        # in-bounds neighbors (4 at corners, 6 on edges, 9 inside)
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        p = ops.ConvParams(np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32))
        y = ops.conv2d_forward(x, p)[0, 0]
        assert y.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]

    def test_matches_reference_random(self, rng):
        x = rng.standard_normal((2, 3, 6, 5)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = ops.conv2d_forward(x, ops.ConvParams(w, b))
        assert y.shape == (2, 4, 6, 5)
        assert np.allclose(y, conv_reference(x, w, b), atol=1e-4)

    def test_preserves_dtype(self, rng):
        for dt in (np.float32, np.float64):
            x = rng.standard_normal((1, 2, 4, 4)).astype(dt)
            p = ops.ConvParams(rng.standard_normal((2, 2, 3, 3)).astype(dt),
                               np.zeros(2, dtype=dt))
            assert ops.conv2d_forward(x, p).dtype == dt

    def test_channel_mismatch_rejected(self, rng):
        p = ops.ConvParams(np.zeros((1, 3, 3, 3), np.float32), np.zeros(1, np.float32))
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d_forward(np.zeros((1, 2, 4, 4), np.float32), p)


class TestConvBackward:
    def test_gradients_match_finite_differences(self, rng):
        x = rng.standard_normal((2, 2, 5, 4))
        w = rng.standard_normal((3, 2, 3, 3)) * 0.5
        b = rng.standard_normal(3) * 0.1
        g = rng.standard_normal((2, 3, 5, 4))
        p = ops.ConvParams(w, b)
        gx, gw, gb = ops.conv2d_backward(x, p, g)

        def loss():
            return float(np.sum(ops.conv2d_forward(x, ops.ConvParams(w, b)) * g))

        assert np.allclose(gx, numeric_grad(loss, x), atol=1e-7)
        assert np.allclose(gw, numeric_grad(loss, w), atol=1e-7)
        assert np.allclose(gb, numeric_grad(loss, b), atol=1e-7)

    def test_euler_identities(self, rng):
        # conv(x; w) + b is linear in x (w, b fixed) and in (w, b) jointly
        # (x fixed), so for L = <y, g>: <x, gx> recovers the conv term and
        # <w, gw> + <b, gb> recovers all of L
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        g = rng.standard_normal((1, 2, 6, 6))
        p = ops.ConvParams(w, b)
        lhs = float(np.sum(ops.conv2d_forward(x, p) * g))
        gx, gw, gb = ops.conv2d_backward(x, p, g)
        bias_term = float(np.sum(b * gb))
        assert lhs == pytest.approx(float(np.sum(x * gx)) + bias_term, rel=1e-10)
        assert lhs == pytest.approx(float(np.sum(w * gw)) + bias_term, rel=1e-10)

    def test_grad_shape_validation(self, rng):
        p = ops.ConvParams(np.zeros((2, 1, 3, 3), np.float32), np.zeros(2, np.float32))
        with pytest.raises(ValueError, match="grad_out"):
            ops.conv2d_backward(np.zeros((1, 1, 4, 4), np.float32), p,
                                np.zeros((1, 2, 5, 4), np.float32))


@pytest.mark.skipif(not _numba_available(), reason="numba not installed")
class TestBackendAgreement:
    def test_conv_same_answer_both_backends(self, rng):
        from relief import _kernels_numba as knb
        from relief import _kernels_numpy as knp
        x = rng.standard_normal((2, 4, 8, 7)).astype(np.float32)
        w = rng.standard_normal((5, 4, 3, 3)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        g = rng.standard_normal((2, 5, 8, 7)).astype(np.float32)
        assert np.allclose(knb.conv2d_forward(x, w, b), knp.conv2d_forward(x, w, b), atol=1e-5)
        for a, bb in zip(knb.conv2d_backward(x, w, g), knp.conv2d_backward(x, w, g)):
            assert np.allclose(a, bb, atol=1e-4)

    def test_maxpool_bitwise_same(self, rng):
        from relief import _kernels_numba as knb
        from relief import _kernels_numpy as knp
        x = rng.standard_normal((2, 3, 8, 6)).astype(np.float32)
        x[0, 0, 0, 0] = x[0, 0, 0, 1]  # force a tie
        ya, aa = knb.maxpool2_forward(x)
        yb, ab = knp.maxpool2_forward(x)
        assert np.array_equal(ya, yb)
        assert np.array_equal(aa, ab)
        g = rng.standard_normal(ya.shape).astype(np.float32)
        assert np.array_equal(knb.maxpool2_backward(g, aa), knp.maxpool2_backward(g, ab))


class TestMaxPool:
    def test_oracle_small(self):
        x = np.array([[1.0, 2.0, 5.0, 0.0],
                      [3.0, 0.0, 1.0, 6.0],
                      [0.0, 9.0, 2.0, 2.0],
                      [8.0, 1.0, 2.0, 2.0]], dtype=np.float32)[None, None]
        y, arg = ops.maxpool2_forward(x)
        assert y[0, 0].tolist() == [[3.0, 6.0], [9.0, 2.0]]
        assert arg[0, 0].tolist() == [[2, 3], [1, 0]]

    def test_ties_take_first_in_scan_order(self):
        x = np.full((1, 1, 2, 2), 7.0, dtype=np.float32)
        y, arg = ops.maxpool2_forward(x)
        assert arg[0, 0, 0, 0] == 0
        assert y[0, 0, 0, 0] == 7.0

    def test_backward_routes_to_argmax(self):
        x = np.array([[1.0, 4.0], [2.0, 3.0]], dtype=np.float32)[None, None]
        y, arg = ops.maxpool2_forward(x)
        g = np.full((1, 1, 1, 1), 10.0, dtype=np.float32)
        gx = ops.maxpool2_backward(g, arg)
        assert gx[0, 0].tolist() == [[0.0, 10.0], [0.0, 0.0]]

    def test_backward_matches_finite_differences(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        g = rng.standard_normal((1, 2, 2, 2))
        _, arg = ops.maxpool2_forward(x)
        gx = ops.maxpool2_backward(g, arg)

        def loss():
            y, _ = ops.maxpool2_forward(x)
            return float(np.sum(y * g))

        # away from ties the max is locally linear, so FD is exact-ish
        assert np.allclose(gx, numeric_grad(loss, x), atol=1e-7)

    def test_odd_dimensions_rejected(self):
        with pytest.raises(ValueError, match="even"):
            ops.maxpool2_forward(np.zeros((1, 1, 3, 4), np.float32))

    def test_corrupt_argmax_rejected(self):
        with pytest.raises(ValueError, match="argmax"):
            ops.maxpool2_backward(np.zeros((1, 1, 2, 2), np.float32),
                                  np.full((1, 1, 2, 2), 7, dtype=np.uint8))


class TestUpsample:
    def test_forward_replicates(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)[None, None]
        y = ops.upsample2_forward(x)
        assert y[0, 0].tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]

    def test_backward_sums_blocks(self):
        g = np.arange(16.0).reshape(1, 1, 4, 4)
        gx = ops.upsample2_backward(g)
        assert gx[0, 0].tolist() == [[0 + 1 + 4 + 5, 2 + 3 + 6 + 7],
                                     [8 + 9 + 12 + 13, 10 + 11 + 14 + 15]]

    def test_adjoint_identity(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        g = rng.standard_normal((2, 3, 8, 10))
        lhs = float(np.sum(ops.upsample2_forward(x) * g))
        rhs = float(np.sum(x * ops.upsample2_backward(g)))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestReluAndDropout:
    def test_relu(self):
        x = np.array([-2.0, 0.0, 3.0])
        assert ops.relu_forward(x).tolist() == [0.0, 0.0, 3.0]
        g = ops.relu_backward(x, np.ones(3))
        assert g.tolist() == [0.0, 0.0, 1.0]  # subgradient 0 at the kink

    def test_eval_mode_is_identity(self, rng):
        x = rng.random((4, 4)).astype(np.float32)
        y, mask = ops.dropout(x, 0.5, None, "eval")
        assert y is x and mask is None

    def test_zero_rate_is_identity(self, rng):
        x = rng.random((4, 4)).astype(np.float32)
        y, mask = ops.dropout(x, 0.0, rng, "train")
        assert y is x and mask is None

    def test_mask_values_and_scaling(self, rng):
        x = np.ones((100, 100), dtype=np.float32)
        y, mask = ops.dropout(x, 0.25, rng, "train")
        scale = np.float32(1.0) / np.float32(0.75)
        assert set(np.unique(mask).tolist()) == {0.0, float(scale)}
        dropped = (mask == 0).mean()
        assert dropped == pytest.approx(0.25, abs=0.02)
        # inverted dropout keeps the expectation
        assert y.mean() == pytest.approx(1.0, abs=0.03)

    def test_backward_reuses_mask(self, rng):
        x = rng.random((8, 8)).astype(np.float32)
        _, mask = ops.dropout(x, 0.5, rng, "train")
        g = np.ones_like(x)
        gx = ops.dropout_backward(g, mask)
        assert np.array_equal(gx, mask)
        assert ops.dropout_backward(g, None) is g

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_bad_rate(self, rate, rng):
        with pytest.raises(ValueError):
            ops.dropout(np.zeros((2, 2)), rate, rng, "train")


class TestHeInit:
    def test_variance_matches_fan_in(self, rng):
        w = ops.he_init((64, 32, 3, 3), rng)
        expect = np.sqrt(2.0 / (32 * 9))
        assert w.std() == pytest.approx(expect, rel=0.05)
        assert abs(w.mean()) < 0.01

    def test_initialized_params(self, rng):
        p = ops.ConvParams.initialized(8, 4, rng)
        assert p.weights.shape == (8, 4, 3, 3)
        assert p.weights.dtype == np.float32
        assert np.array_equal(p.bias, np.zeros(8, dtype=np.float32))


class TestAdam:
    def test_first_step_closed_form(self):
        # with fresh moments one step moves by alpha * g / (|g| + eps'),
        # where the bias corrections cancel exactly at t=1
        p = [np.array([1.0, -2.0])]
        g = [np.array([0.5, -4.0])]
        st = ops.AdamState.zeros_like(p)
        ops.adam_step(p, g, st, alpha=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        m_hat = g[0]  # (1-b1)g / (1-b1)
        v_hat = g[0] ** 2
        expect = np.array([1.0, -2.0]) - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(p[0], expect, rtol=1e-12)
        assert st.t == 1

    def test_two_steps_closed_form(self):
        a, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = [np.array([0.0])]
        st = ops.AdamState.zeros_like(p)
        g1, g2 = 3.0, -1.0
        ops.adam_step(p, [np.array([g1])], st, a, b1, b2, eps)
        ops.adam_step(p, [np.array([g2])], st, a, b1, b2, eps)
        m2 = (1 - b1) * (b1 * g1 + g2)
        v2 = (1 - b2) * (b2 * g1 ** 2 + g2 ** 2)
        mh = m2 / (1 - b1 ** 2)
        vh = v2 / (1 - b2 ** 2)
        step1 = a * g1 / (abs(g1) + eps)
        expect = -step1 - a * mh / (np.sqrt(vh) + eps)
        assert p[0][0] == pytest.approx(expect, rel=1e-12)

    def test_minimizes_quadratic(self):
        p = [np.array([10.0])]
        st = ops.AdamState.zeros_like(p)
        for _ in range(2000):
            grad = [2.0 * (p[0] - 3.0)]
            ops.adam_step(p, grad, st, alpha=0.05)
        assert p[0][0] == pytest.approx(3.0, abs=1e-3)

    def test_updates_in_place_preserving_dtype(self):
        arr = np.ones(3, dtype=np.float32)
        p = [arr]
        st = ops.AdamState.zeros_like(p)
        ops.adam_step(p, [np.ones(3, dtype=np.float32)], st)
        assert p[0] is arr
        assert arr.dtype == np.float32
        assert (arr < 1.0).all()

    def test_nonfinite_gradient_raises_with_name(self):
        p = [np.zeros(2)]
        st = ops.AdamState.zeros_like(p)
        with pytest.raises(NumericError, match="enc0_conv1.weights"):
            ops.adam_step(p, [np.array([1.0, np.nan])], st, names=["enc0_conv1.weights"])
        assert st.t == 0  # state untouched on failure

    def test_length_mismatch(self):
        st = ops.AdamState.zeros_like([np.zeros(2)])
        with pytest.raises(ValueError):
            ops.adam_step([np.zeros(2)], [], st)


class TestMseLoss:
    def test_full_region_oracle(self):
        pred = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        target = np.array([[[[1.0, 1.0], [1.0, 1.0]]]])
        loss, grad = ops.mse_loss(pred, target)
        assert loss == pytest.approx((0 + 1 + 4 + 9) / 4.0)
        assert np.allclose(grad, 2.0 * (pred - target) / 4.0)

    def test_region_masks_gradient(self):
        pred = np.zeros((1, 1, 4, 4))
        target = np.ones((1, 1, 4, 4))
        loss, grad = ops.mse_loss(pred, target, region=(1, 1, 2, 2))
        assert loss == pytest.approx(1.0)
        assert grad[0, 0, 0, 0] == 0.0
        assert grad[0, 0, 1, 1] == pytest.approx(-2.0 / 4.0)
        assert np.count_nonzero(grad) == 4

    def test_gradient_matches_finite_differences(self, rng):
        pred = rng.standard_normal((2, 1, 4, 4))
        target = rng.standard_normal((2, 1, 4, 4))
        _, grad = ops.mse_loss(pred, target, region=(1, 0, 2, 3))

        def loss():
            return ops.mse_loss(pred, target, region=(1, 0, 2, 3))[0]

        assert np.allclose(grad, numeric_grad(loss, pred), atol=1e-9)

    def test_loss_accumulates_in_float64(self):
        # 1e8 identical float32 squares would lose mass if summed in f32;
        # a smaller proxy: values whose f32 sum visibly drifts
        pred = np.full((1, 1, 256, 256), 0.1, dtype=np.float32)
        target = np.zeros((1, 1, 256, 256), dtype=np.float32)
        loss, _ = ops.mse_loss(pred, target)
        f32sq = float(np.float32(0.1)) ** 2
        assert loss == pytest.approx(f32sq, rel=1e-9)

    @pytest.mark.parametrize("region", [(0, 0, 0, 4), (-1, 0, 2, 2), (3, 3, 2, 2)])
    def test_bad_region(self, region):
        with pytest.raises(ValueError):
            ops.mse_loss(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)), region)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ops.mse_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


class TestClip:
    def test_clip01(self):
        x = np.array([-0.5, 0.25, 1.5])
        assert ops.clip01(x).tolist() == [0.0, 0.25, 1.0]
