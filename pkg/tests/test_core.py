import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebr.core import (AdamState, NonFiniteError, Tensor, adam_step, backward, checked,
                      gradcheck, init_params, no_grad, ops)


def naive_conv2d(x, w, b, stride=1):
    """Direct same-padded cross-correlation by explicit summation."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    oh, ow = -(-h // stride), -(-wd // stride)
    ph = max((oh - 1) * stride + kh - h, 0) // 2
    pw = max((ow - 1) * stride + kw - wd, 0) // 2
    out = np.zeros((n, oh, ow, cout))
    for bi, i, j, o in itertools.product(range(n), range(oh), range(ow), range(cout)):
        s = b[o]
        for a, c, ci in itertools.product(range(kh), range(kw), range(cin)):
            ii, jj = i * stride + a - ph, j * stride + c - pw
            if 0 <= ii < h and 0 <= jj < wd:
                s += x[bi, ii, jj, ci] * w[a, c, ci, o]
        out[bi, i, j, o] = s
    return out


def naive_conv_transpose2d(x, w, stride):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    crop_h, crop_w = max(kh - stride, 0) // 2, max(kw - stride, 0) // 2
    out = np.zeros((n, h * stride, wd * stride, cout))
    for bi, i, j, a, c in itertools.product(range(n), range(h), range(wd), range(kh), range(kw)):
        oi, oj = i * stride + a - crop_h, j * stride + c - crop_w
        if 0 <= oi < h * stride and 0 <= oj < wd * stride:
            out[bi, oi, oj] += x[bi, i, j] @ w[a, c]
    return out


def param(gen, *shape):
    return Tensor(gen.standard_normal(shape), requires_grad=True)


class TestConvForward:
    def test_zero_kernel_gives_bias(self, gen):
        x = gen.standard_normal((2, 7, 3))
        out = ops.conv(x, np.zeros((3, 3, 4)), np.array([1.0, -2.0, 0.5, 3.0]))
        assert np.array_equal(out.data, np.broadcast_to([1.0, -2.0, 0.5, 3.0], (2, 7, 4)))

    def test_identity_kernel_1d(self, gen):
        x = gen.standard_normal((3, 11, 1))
        out = ops.conv(x, np.ones((1, 1, 1)), np.zeros(1))
        assert np.array_equal(out.data, x)

    def test_matches_naive_summation(self, gen):
        x = gen.standard_normal((1, 5, 5, 2))
        w = gen.standard_normal((3, 3, 2, 4))
        b = gen.standard_normal(4)
        np.testing.assert_allclose(ops.conv(x, w, b).data, naive_conv2d(x, w, b), atol=1e-12, rtol=0)

    @pytest.mark.parametrize("stride,k,size", [(2, 3, 7), (2, 4, 6), (3, 2, 8)])
    def test_strided_matches_naive(self, gen, stride, k, size):
        x = gen.standard_normal((2, size, size, 2))
        w = gen.standard_normal((k, k, 2, 3))
        b = gen.standard_normal(3)
        out = ops.conv(x, w, b, stride)
        assert out.shape == (2, -(-size // stride), -(-size // stride), 3)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride), atol=1e-12)

    @pytest.mark.parametrize("stride,k", [(4, 4), (2, 3), (1, 3), (2, 2)])
    def test_transpose_matches_naive(self, gen, stride, k):
        x = gen.standard_normal((2, 3, 4, 2))
        w = gen.standard_normal((k, k, 2, 3))
        out = ops.conv_transpose(x, w, None, stride)
        assert out.shape == (2, 3 * stride, 4 * stride, 3)
        np.testing.assert_allclose(out.data, naive_conv_transpose2d(x, w, stride), atol=1e-12)

    def test_shape_error_names_both_shapes(self, gen):
        with pytest.raises(ValueError, match=r"\(1, 5, 5, 2\).*\(3, 3, 3, 4\)"):
            ops.conv(np.zeros((1, 5, 5, 2)), np.zeros((3, 3, 3, 4)))

    def test_linearity(self, gen):
        x1, x2 = gen.standard_normal((2, 2, 9, 9, 3))
        w = gen.standard_normal((3, 3, 3, 5))
        a, b = 1.7, -0.3
        lhs = ops.conv(a * x1 + b * x2, w).data
        rhs = a * ops.conv(x1, w).data + b * ops.conv(x2, w).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_deterministic(self, gen):
        x = gen.standard_normal((2, 9, 9, 3))
        w = gen.standard_normal((3, 3, 3, 5))
        assert ops.conv(x, w).data.tobytes() == ops.conv(x, w).data.tobytes()


class TestBackward:
    def test_sum_gives_ones(self, gen):
        p = param(gen, 6)
        ops.sum(p).backward()
        assert np.array_equal(p.grad, np.ones(6))

    def test_stationary_point(self):
        p = Tensor(np.zeros(5), requires_grad=True)
        ops.sum_squares(p).backward()
        assert np.array_equal(p.grad, np.zeros(5))

    def test_non_scalar_rejected(self, gen):
        p = param(gen, 3)
        with pytest.raises(ValueError, match="scalar"):
            backward(ops.relu(p))

    def test_accumulates_without_reset(self, gen):
        p = param(gen, 4)
        ops.sum(p).backward()
        ops.sum(p).backward()
        assert np.array_equal(p.grad, 2 * np.ones(4))
        p.zero_grad()
        ops.sum(p).backward()
        assert np.array_equal(p.grad, np.ones(4))

    def test_shared_subgraph(self, gen):
        p = param(gen, 5)
        q = ops.relu(p)
        loss = ops.sum_squares(ops.add(q, q))
        loss.backward()
        np.testing.assert_allclose(p.grad, 8 * np.maximum(p.data, 0) * (p.data > 0))

    def test_no_grad_records_nothing(self, gen):
        p = param(gen, 3)
        with no_grad():
            out = ops.sum(p)
        assert not out.requires_grad and out.parents == ()

    def test_gradient_shapes(self, gen):
        x = param(gen, 2, 6, 6, 2)
        w = param(gen, 3, 3, 2, 3)
        ops.sum_squares(ops.conv(x, w)).backward()
        assert x.grad.shape == x.shape and w.grad.shape == w.shape

    def test_conv_relu_dense_network(self, gen):
        x = gen.standard_normal((3, 6, 6, 2))
        w1, b1 = param(gen, 3, 3, 2, 4), param(gen, 4)
        w2, b2 = param(gen, 6 * 6 * 4, 5), param(gen, 5)

        def loss():
            h = ops.relu(ops.conv(x, w1, b1))
            return ops.sum_squares(ops.dense(ops.reshape(h, (3, -1)), w2, b2))

        assert gradcheck(loss, [w1, b1, w2, b2], h=1e-5) < 1e-5


class TestOpGradients:
    """Every differentiable op against central differences in float64."""

    def check(self, build, params):
        assert gradcheck(build, params, h=1e-6) < 1e-5

    def test_conv1d(self, gen):
        x, w, b = param(gen, 2, 9, 3), param(gen, 3, 3, 4), param(gen, 4)
        t = gen.standard_normal((2, 9, 4))
        self.check(lambda: ops.sum_squares(ops.sub(ops.conv(x, w, b), t)), [x, w, b])

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv2d(self, gen, stride):
        x, w, b = param(gen, 2, 5, 5, 2), param(gen, 3, 3, 2, 3), param(gen, 3)
        self.check(lambda: ops.sum_squares(ops.conv(x, w, b, stride)), [x, w, b])

    @pytest.mark.parametrize("stride,k", [(4, 4), (2, 3)])
    def test_conv_transpose(self, gen, stride, k):
        x, w, b = param(gen, 2, 2, 3, 2), param(gen, k, k, 2, 3), param(gen, 3)
        self.check(lambda: ops.sum_squares(ops.conv_transpose(x, w, b, stride)), [x, w, b])

    def test_dense(self, gen):
        x, w, b = param(gen, 4, 5), param(gen, 5, 3), param(gen, 3)
        self.check(lambda: ops.sum_squares(ops.dense(x, w, b)), [x, w, b])

    def test_relu(self, gen):
        x = Tensor(gen.uniform(0.1, 1.0, (4, 5)) * np.sign(gen.standard_normal((4, 5))), requires_grad=True)
        self.check(lambda: ops.sum_squares(ops.relu(x)), [x])

    def test_avgpool_upsample(self, gen):
        x = param(gen, 2, 4, 6, 3)
        t = gen.standard_normal((2, 4, 6, 3))
        self.check(lambda: ops.sum_squares(ops.sub(ops.upsample(ops.avgpool(x, 2), 2), t)), [x])

    def test_add_sub_scale_reshape(self, gen):
        a, b = param(gen, 3, 4), param(gen, 3, 4)
        c = gen.standard_normal((3, 4))
        self.check(lambda: ops.sum_squares(ops.reshape(ops.scale(ops.sub(ops.add(a, b), b * 0.5), c), (12,))),
                   [a, b])

    def test_mse_masked(self, gen):
        p = param(gen, 4, 5)
        t = gen.standard_normal((4, 5))
        m = (gen.random((4, 5)) > 0.5).astype(float)
        m[0, 0] = 1
        self.check(lambda: ops.mse_masked(p, t, m), [p])

    def test_softmax_xent(self, gen):
        z = param(gen, 6, 4)
        labels = gen.integers(0, 4, 6)
        self.check(lambda: ops.softmax_xent(z, labels), [z])


class TestOps:
    def test_pool_of_upsampled_constant(self):
        x = np.full((2, 4, 4, 3), 2.5)
        assert np.array_equal(ops.upsample(ops.avgpool(x, 2), 2).data, x)

    def test_mse_masked_empty(self):
        with pytest.raises(ValueError, match="empty"):
            ops.mse_masked(np.zeros(3), np.zeros(3), np.zeros(3))

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            ops.add(np.zeros(3), np.zeros(4))

    def test_checked_mode_rejects_nan(self):
        with checked():
            with pytest.raises(NonFiniteError):
                Tensor(np.array([1.0, np.nan]))
        Tensor(np.array([np.nan]))


class TestAdam:
    def test_zero_gradient_fresh_state(self, gen):
        p = gen.standard_normal(5)
        before = p.copy()
        adam_step([p], [np.zeros(5)], AdamState())
        assert np.array_equal(p, before)

    def test_first_step_magnitude(self, gen):
        g = gen.standard_normal(100) * 10 ** gen.uniform(-3, 3, 100)
        p = np.zeros(100)
        adam_step([p], [g], AdamState(lr=1e-3))
        np.testing.assert_allclose(p, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-6)
        big = np.abs(g) > 1e-2
        np.testing.assert_allclose(np.abs(p[big]), 1e-3, rtol=1e-5)

    def test_scalar_convergence(self):
        p = np.array([1.0])
        s = AdamState(lr=1e-2)
        for _ in range(1000):
            adam_step([p], [2 * p], s)
        assert abs(p[0]) < 1e-2

    def test_counter_increments(self, gen):
        s = AdamState()
        p = gen.standard_normal(3)
        for k in range(1, 4):
            adam_step([p], [gen.standard_normal(3)], s)
            assert s.t == k
            assert s.m[0].shape == p.shape and s.v[0].shape == p.shape

    def test_non_finite_gradient_rejected(self, gen):
        s = AdamState()
        p = gen.standard_normal(3)
        adam_step([p], [np.ones(3)], s)
        before, m0 = p.copy(), s.m[0].copy()
        with pytest.raises(NonFiniteError):
            adam_step([p], [np.array([1.0, np.inf, 0.0])], s)
        assert s.t == 1 and np.array_equal(p, before) and np.array_equal(s.m[0], m0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(3)], [np.zeros(4)], AdamState())


class TestInit:
    def test_bounds(self):
        assert np.all(np.abs(init_params((1000,), 6, 0)) <= 1.0)

    def test_deterministic(self):
        assert init_params((7, 3), 4, 9).tobytes() == init_params((7, 3), 4, 9).tobytes()

    def test_variance(self):
        v = init_params((100_000,), 6, 3).var()
        assert abs(v - 2 / 6) < 0.1 * 2 / 6

    def test_bad_fan_in(self):
        with pytest.raises(ValueError):
            init_params((3,), 0, 0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 9), k=st.integers(1, 5), stride=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_conv1d_output_size_and_linearity(n, k, stride, seed):
    g = np.random.default_rng(seed)
    x1, x2 = g.standard_normal((2, 2, n, 2))
    w = g.standard_normal((k, 2, 3))
    out = ops.conv(x1 + x2, w, None, stride).data
    assert out.shape == (2, -(-n // stride), 3)
    np.testing.assert_allclose(out, ops.conv(x1, w, None, stride).data + ops.conv(x2, w, None, stride).data,
                               atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 6), k=st.integers(1, 4), stride=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_conv1d_gradient_property(n, k, stride, seed):
    g = np.random.default_rng(seed)
    x = Tensor(g.standard_normal((2, n, 2)), requires_grad=True)
    w = Tensor(g.standard_normal((k, 2, 2)), requires_grad=True)
    b = Tensor(g.standard_normal(2), requires_grad=True)
    assert gradcheck(lambda: ops.sum_squares(ops.conv(x, w, b, stride)), [x, w, b], h=1e-6) < 1e-5
