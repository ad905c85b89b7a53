"""Tensor-op oracles and gradient checks.

Each op is verified against an independent reference (nested loops,
two-pass statistics, scalar interpolation) in float64 before anything
relies on it downstream.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distcond import autodiff as ad
from distcond.autodiff import Tensor
from distcond.errors import NumericError, ShapeError, TapeError

from conftest import grad_check, rel_err


# ---------------------------------------------------------------------------
# reference implementations (oracles)


def conv2d_ref(x, w, b, stride, pad):
    """Direct quadruple-nested-loop cross-correlation in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for ni in range(n):
        for oc in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[ni, ic, i * stride + ki, j * stride + kj] * w[oc, ic, ki, kj]
                    out[ni, oc, i, j] = acc + b[oc]
    return out


def avgpool_ref(x, k, stride, pad):
    """Window mean with fixed divisor k*k."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[ni, ci, i, j] = xp[ni, ci, i * stride : i * stride + k,
                                           j * stride : j * stride + k].sum() / (k * k)
    return out


def instance_norm_ref(x, gain, shift, eps=1e-5):
    """Two-pass mean/variance standardization."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    n, c, _, _ = x.shape
    for ni in range(n):
        for ci in range(c):
            plane = x[ni, ci]
            mu = plane.mean()
            var = ((plane - mu) ** 2).mean()
            out[ni, ci] = gain[ci] * (plane - mu) / math.sqrt(var + eps) + shift[ci]
    return out


def softmax_ce_ref(logits, labels):
    """Direct long-double softmax cross-entropy."""
    z = np.asarray(logits, dtype=np.longdouble)
    total = 0.0
    for row, lab in zip(z, labels):
        p = np.exp(row - row.max())
        p /= p.sum()
        total += -np.log(p[lab])
    return float(total / len(labels))


def linear_ref(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = sum(x[i, t] * w[j, t] for t in range(d)) + b[j]
    return out


def bilinear_ref(img, oh, ow):
    """Scalar half-pixel-center interpolation."""
    h, w = img.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        sy = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1.0)
        y0 = min(int(math.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0 if y1 != y0 else 0.0
        for j in range(ow):
            sx = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1.0)
            x0 = min(int(math.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0 if x1 != x0 else 0.0
            top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
            bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
            out[i, j] = (1 - fy) * top + fy * bot
    return out


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_identity_kernel():
    x = Tensor(np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3))
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    out = ad.conv2d(x, Tensor(w), Tensor(np.zeros(1, dtype=np.float32)), 1, 1)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_zero_weight():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
    w = Tensor(np.zeros((5, 3, 3, 3), dtype=np.float32))
    b = Tensor(np.zeros(5, dtype=np.float32))
    out = ad.conv2d(x, w, b, 1, 1)
    assert not out.data.any()


def test_conv2d_matches_nested_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        want = conv2d_ref(x, w, b, stride, pad)
        got = ad.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                        Tensor(b, dtype=np.float64), stride, pad)
        assert rel_err(got.data, want) < 1e-6


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        ad.conv2d(x, Tensor(np.zeros((1, 3, 3, 3), dtype=np.float32)),
                  Tensor(np.zeros(1, dtype=np.float32)), 1, 1)
    with pytest.raises(ShapeError):  # even kernel
        ad.conv2d(x, Tensor(np.zeros((1, 2, 2, 2), dtype=np.float32)),
                  Tensor(np.zeros(1, dtype=np.float32)), 1, 1)


def test_conv2d_nonfinite_rejected():
    x = Tensor(np.full((1, 1, 3, 3), np.inf, dtype=np.float32))
    w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    b = Tensor(np.zeros(1, dtype=np.float32))
    with pytest.raises(NumericError):
        ad.conv2d(x, w, b, 1, 1)


def test_conv2d_grad(rng):
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    b = Tensor(rng.standard_normal(3))
    grad_check(lambda x, w, b: ad.sum_(ad.conv2d(x, w, b, 2, 1)), [x, w, b])


# ---------------------------------------------------------------------------
# avg_pool2d


def test_avgpool_constant_window():
    x = Tensor(np.full((1, 1, 3, 3), 7.0, dtype=np.float32))
    out = ad.avg_pool2d(x, 3, 1, 0)
    assert out.data.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == pytest.approx(7.0)


def test_avgpool_frozen_example():
    x = Tensor(np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4))
    out = ad.avg_pool2d(x, 2, 2, 0)
    np.testing.assert_allclose(out.data[0, 0], [[3.5, 5.5], [11.5, 13.5]])


def test_avgpool_output_shape_32():
    x = Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32))
    assert ad.avg_pool2d(x, 3, 2, 1).shape == (1, 1, 16, 16)


def test_avgpool_matches_window_oracle(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    for k, s, p in [(2, 2, 0), (3, 2, 1), (3, 1, 0)]:
        want = avgpool_ref(x, k, s, p)
        got = ad.avg_pool2d(Tensor(x, dtype=np.float64), k, s, p)
        assert rel_err(got.data, want) < 1e-12


def test_avgpool_empty_output_errors():
    with pytest.raises(ShapeError):
        ad.avg_pool2d(Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32)), 5, 1, 0)


def test_avgpool_grad(rng):
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    grad_check(lambda x: ad.sum_(ad.avg_pool2d(x, 3, 2, 1)), [x])


# ---------------------------------------------------------------------------
# instance_norm


def test_instance_norm_constant_channel_is_zero():
    x = Tensor(np.full((2, 3, 4, 4), 5.0, dtype=np.float32))
    out = ad.instance_norm(x, Tensor(np.ones(3, dtype=np.float32)),
                           Tensor(np.zeros(3, dtype=np.float32)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-5)


def test_instance_norm_moments(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 6)))
    gain = np.array([1.5, 0.5, 2.0], dtype=np.float32)
    shift = np.array([0.3, -1.0, 0.0], dtype=np.float32)
    out = ad.instance_norm(x, Tensor(gain), Tensor(shift))
    mean = out.data.mean(axis=(2, 3))
    std = out.data.std(axis=(2, 3))
    np.testing.assert_allclose(mean, np.tile(shift, (2, 1)), atol=1e-5)
    np.testing.assert_allclose(std, np.tile(gain, (2, 1)), atol=1e-3)


def test_instance_norm_matches_two_pass_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    gain = rng.standard_normal(3)
    shift = rng.standard_normal(3)
    want = instance_norm_ref(x, gain, shift)
    got = ad.instance_norm(Tensor(x, dtype=np.float64), Tensor(gain, dtype=np.float64),
                           Tensor(shift, dtype=np.float64))
    assert rel_err(got.data, want) < 1e-6


def test_instance_norm_grad(rng):
    x = Tensor(rng.standard_normal((2, 2, 4, 4)))
    gain = Tensor(rng.standard_normal(2))
    shift = Tensor(rng.standard_normal(2))
    grad_check(lambda x, g, s: ad.sum_(ad.mul(ad.instance_norm(x, g, s), ad.instance_norm(x, g, s))),
               [x, gain, shift], rtol=1e-4)


def test_instance_norm_zero_spatial_errors():
    with pytest.raises(ShapeError):
        ad.instance_norm(Tensor(np.zeros((1, 1, 1, 1), dtype=np.float32)),
                         Tensor(np.ones(1, dtype=np.float32)),
                         Tensor(np.zeros(1, dtype=np.float32)))


# ---------------------------------------------------------------------------
# relu / linear


def test_relu_values_and_grad():
    x = Tensor(np.array([-1.0, 0.0, 2.0], dtype=np.float32), requires_grad=True)
    out = ad.relu(x)
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    y = Tensor(np.array([-1.0, 2.0]), requires_grad=True, dtype=np.float64)
    with ad.record():
        ad.backward(ad.sum_(ad.relu(y)))
    np.testing.assert_array_equal(y.grad, [0.0, 1.0])


def test_relu_all_negative():
    out = ad.relu(Tensor(-np.ones(5, dtype=np.float32)))
    assert not out.data.any()


def test_linear_identity_and_zero():
    x = Tensor(np.random.default_rng(2).standard_normal((3, 4)).astype(np.float32))
    eye = Tensor(np.eye(4, dtype=np.float32))
    zero_b = Tensor(np.zeros(4, dtype=np.float32))
    np.testing.assert_allclose(ad.linear(x, eye, zero_b).data, x.data, rtol=1e-6)

    b = np.array([1.0, -2.0], dtype=np.float32)
    out = ad.linear(x, Tensor(np.zeros((2, 4), dtype=np.float32)), Tensor(b))
    np.testing.assert_allclose(out.data, np.tile(b, (3, 1)))


def test_linear_matches_dot_oracle(rng):
    x = rng.standard_normal((2, 3))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    want = linear_ref(x, w, b)
    got = ad.linear(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                    Tensor(b, dtype=np.float64))
    assert rel_err(got.data, want) < 1e-12


def test_linear_dim_mismatch():
    with pytest.raises(ShapeError):
        ad.linear(Tensor(np.zeros((2, 3), dtype=np.float32)),
                  Tensor(np.zeros((4, 5), dtype=np.float32)),
                  Tensor(np.zeros(4, dtype=np.float32)))


def test_linear_grad(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    w = Tensor(rng.standard_normal((2, 4)))
    b = Tensor(rng.standard_normal(2))
    grad_check(lambda x, w, b: ad.mean(ad.mul(ad.linear(x, w, b), ad.linear(x, w, b))), [x, w, b])


# ---------------------------------------------------------------------------
# bilinear_upsample


def test_upsample_constant_and_identity(rng):
    v = 3.25
    x = Tensor(np.full((1, 1, 1, 1), v, dtype=np.float32))
    out = ad.bilinear_upsample(x, 4, 4)
    np.testing.assert_allclose(out.data, v)

    y = Tensor(rng.standard_normal((2, 3, 5, 5)).astype(np.float32))
    same = ad.bilinear_upsample(y, 5, 5)
    np.testing.assert_allclose(same.data, y.data, rtol=1e-6)


def test_upsample_matches_scalar_oracle():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    want = bilinear_ref(img, 4, 4)
    got = ad.bilinear_upsample(Tensor(img.reshape(1, 1, 2, 2), dtype=np.float64), 4, 4)
    assert rel_err(got.data[0, 0], want) < 1e-12


def test_upsample_random_matches_oracle(rng):
    img = rng.standard_normal((3, 5))
    want = bilinear_ref(img, 7, 11)
    got = ad.bilinear_upsample(Tensor(img.reshape(1, 1, 3, 5), dtype=np.float64), 7, 11)
    assert rel_err(got.data[0, 0], want) < 1e-12


def test_upsample_rejects_downscale():
    with pytest.raises(ShapeError):
        ad.bilinear_upsample(Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32)), 2, 4)


def test_upsample_grad(rng):
    x = Tensor(rng.standard_normal((2, 2, 3, 3)))
    grad_check(lambda x: ad.sum_(ad.mul(ad.bilinear_upsample(x, 7, 5), 0.5)), [x])


# ---------------------------------------------------------------------------
# softmax_cross_entropy


def test_ce_uniform_logits_ln_k():
    logits = Tensor(np.zeros((4, 10), dtype=np.float32))
    out = ad.softmax_cross_entropy(logits, [0, 3, 5, 9])
    assert out.item() == pytest.approx(math.log(10.0), rel=1e-6)


def test_ce_saturated_correct_near_zero():
    logits = np.zeros((2, 5), dtype=np.float32)
    logits[0, 1] = 1e4
    logits[1, 4] = 1e4
    out = ad.softmax_cross_entropy(Tensor(logits), [1, 4])
    assert out.item() == pytest.approx(0.0, abs=1e-6)


def test_ce_matches_direct_oracle(rng):
    logits = rng.standard_normal((3, 4))
    labels = [2, 0, 3]
    want = softmax_ce_ref(logits, labels)
    got = ad.softmax_cross_entropy(Tensor(logits, dtype=np.float64), labels)
    assert rel_err(got.item(), want) < 1e-6


def test_ce_label_out_of_range():
    with pytest.raises(ShapeError):
        ad.softmax_cross_entropy(Tensor(np.zeros((2, 3), dtype=np.float32)), [0, 3])


def test_ce_grad(rng):
    logits = Tensor(rng.standard_normal((4, 5)))
    grad_check(lambda l: ad.softmax_cross_entropy(l, [1, 0, 4, 2]), [logits])


# ---------------------------------------------------------------------------
# mean_embedding_sq_dist


def test_msd_identical_rows_zero(rng):
    a = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
    assert ad.mean_embedding_sq_dist(a, Tensor(a.data.copy())).item() == 0.0


def test_msd_analytic_means():
    a = Tensor(np.array([[0.0], [2.0]], dtype=np.float32))
    b = Tensor(np.array([[5.0]], dtype=np.float32))
    assert ad.mean_embedding_sq_dist(a, b).item() == pytest.approx(16.0)


def test_msd_matches_mean_then_norm_oracle(rng):
    a = rng.standard_normal((8, 5))
    b = rng.standard_normal((4, 5))
    want = float(((a.mean(0) - b.mean(0)) ** 2).sum())
    got = ad.mean_embedding_sq_dist(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
    assert rel_err(got.item(), want) < 1e-12


def test_msd_empty_errors():
    with pytest.raises(ShapeError):
        ad.mean_embedding_sq_dist(Tensor(np.zeros((0, 3), dtype=np.float32)),
                                  Tensor(np.zeros((2, 3), dtype=np.float32)))


def test_msd_grad(rng):
    a = Tensor(rng.standard_normal((5, 3)))
    b = Tensor(rng.standard_normal((2, 3)))
    grad_check(ad.mean_embedding_sq_dist, [a, b])


# ---------------------------------------------------------------------------
# structural ops


def test_concat_narrow_slice_pad_grads(rng):
    a = Tensor(rng.standard_normal((2, 2, 4, 4)))
    b = Tensor(rng.standard_normal((3, 2, 4, 4)))

    def f(a, b):
        cat = ad.concat([a, b], axis=0)
        part = ad.narrow(cat, 1, 3)
        win = ad.spatial_slice(part, 1, 0, 2, 3)
        padded = ad.pad2d(win, 1)
        return ad.sum_(ad.mul(padded, padded))

    grad_check(f, [a, b])


def test_take_rows_grad(rng):
    x = Tensor(rng.standard_normal((4, 3)))
    idx = np.array([0, 2, 2, 1])
    grad_check(lambda x: ad.sum_(ad.mul(ad.take_rows(x, idx), 2.0)), [x])


def test_broadcast_add_mul_grads(rng):
    x = Tensor(rng.standard_normal((3, 2, 4, 4)))
    m = Tensor(rng.standard_normal((3, 1, 1, 1)))
    grad_check(lambda x, m: ad.sum_(ad.mul(ad.add(x, m), m)), [x, m])


def test_mean_axes_keepdims(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    out = ad.mean(x, axes=(1, 2, 3), keepdims=True)
    assert out.shape == (2, 1, 1, 1)
    np.testing.assert_allclose(out.data.ravel(), x.data.reshape(2, -1).mean(1), rtol=1e-6)
    grad_check(lambda x: ad.sum_(ad.mul(ad.mean(x, axes=(1, 2, 3), keepdims=True), 3.0)), [x])


# ---------------------------------------------------------------------------
# tape semantics


def test_backward_simple_square():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    with ad.record():
        loss = ad.sum_(ad.mul(x, x))
        ad.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_unrelated_input_gets_no_grad():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    y = Tensor(np.array([3.0]), requires_grad=True, dtype=np.float64)
    with ad.record():
        loss = ad.sum_(ad.mul(x, x))
        grads = ad.backward(loss)
    assert y.grad is None and y not in grads


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    with ad.record():
        out = ad.mul(x, 2.0)
        with pytest.raises(TapeError):
            ad.backward(out)


def test_backward_twice_is_stale():
    x = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    with ad.record():
        loss = ad.sum_(x)
        ad.backward(loss)
        with pytest.raises(TapeError):
            ad.backward(loss)


def test_backward_without_tape():
    x = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    loss = ad.sum_(x)  # no active tape
    with pytest.raises(TapeError):
        ad.backward(loss)


def test_no_grad_materialized_for_frozen_inputs(rng):
    x = Tensor(rng.standard_normal((2, 3)))  # frozen
    y = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    with ad.record() as tape:
        loss = ad.sum_(ad.mul(x, y))
        ad.backward(loss)
    assert x.grad is None and y.grad is not None


def test_shared_input_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True, dtype=np.float64)
    with ad.record():
        loss = ad.sum_(ad.mul(x, x))  # d/dx x^2 = 2x
        ad.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0])


# ---------------------------------------------------------------------------
# finite_diff_gradient as an op


def test_fd_gradient_of_sum_is_ones():
    x = Tensor(np.random.default_rng(3).standard_normal((2, 3)), dtype=np.float64)
    fd = ad.finite_diff_gradient(ad.sum_, x)
    np.testing.assert_allclose(fd.data, 1.0, atol=1e-7)


def test_fd_gradient_of_square_at_three():
    x = Tensor(np.array([3.0]), dtype=np.float64)
    fd = ad.finite_diff_gradient(lambda t: ad.sum_(ad.mul(t, t)), x, step=1e-5)
    assert fd.data[0] == pytest.approx(6.0, abs=1e-6)


def test_fd_agrees_on_composed_network(rng):
    x = Tensor(rng.standard_normal((1, 2, 6, 6)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    b = Tensor(rng.standard_normal(3) * 0.1)
    g = Tensor(np.abs(rng.standard_normal(3)) + 0.5)
    s = Tensor(rng.standard_normal(3) * 0.1)
    wl = Tensor(rng.standard_normal((2, 3 * 3 * 3)) * 0.3)
    bl = Tensor(rng.standard_normal(2) * 0.1)

    def f(x, w, b, g, s, wl, bl):
        y = ad.conv2d(x, w, b, 1, 1)
        y = ad.instance_norm(y, g, s)
        y = ad.relu(y)
        y = ad.avg_pool2d(y, 3, 2, 1)
        y = ad.reshape(y, (1, 3 * 3 * 3))
        return ad.mean(ad.linear(y, wl, bl))

    grad_check(f, [x, w, b, g, s, wl, bl], rtol=1e-4)


# ---------------------------------------------------------------------------
# invariants (property tests)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_ops_are_pure(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.standard_normal((1, 2, 5, 5)).astype(np.float32))
    w = Tensor(r.standard_normal((2, 2, 3, 3)).astype(np.float32))
    b = Tensor(r.standard_normal(2).astype(np.float32))
    a = ad.conv2d(x, w, b, 1, 1).data
    bq = ad.conv2d(x, w, b, 1, 1).data
    np.testing.assert_array_equal(a, bq)


@settings(max_examples=25, deadline=None)
@given(st.floats(-4.0, 4.0), st.integers(0, 2**31 - 1))
def test_linearity_in_data_with_zero_bias(alpha, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((1, 2, 4, 4))
    w = Tensor(r.standard_normal((3, 2, 3, 3)), dtype=np.float64)
    zb = Tensor(np.zeros(3), dtype=np.float64)
    lhs = ad.conv2d(Tensor(alpha * x, dtype=np.float64), w, zb, 1, 1).data
    rhs = alpha * ad.conv2d(Tensor(x, dtype=np.float64), w, zb, 1, 1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    lhs_p = ad.avg_pool2d(Tensor(alpha * x, dtype=np.float64), 3, 2, 1).data
    rhs_p = alpha * ad.avg_pool2d(Tensor(x, dtype=np.float64), 3, 2, 1).data
    np.testing.assert_allclose(lhs_p, rhs_p, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cross_entropy_nonnegative(seed):
    r = np.random.default_rng(seed)
    logits = Tensor(r.standard_normal((4, 6)) * 5.0, dtype=np.float64)
    labels = r.integers(0, 6, size=4)
    assert ad.softmax_cross_entropy(logits, labels).item() >= 0.0
