"""Tensor algebra, reverse-mode differentiation and optimizer tests.

Derived expectations are computed by independent oracles in this file
(direct arithmetic, central finite differences) rather than by the code
under test.
"""

import numpy as np
import pytest

from samarl import autodiff as ad
from samarl.autodiff import Graph, Tensor, no_tape, param
from samarl.optim import OptimizerState, adam_step, zero_grads

from conftest import finite_difference, max_rel_err


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def test_matmul_identity():
    m = np.array([[2.0, -3.0], [5.0, 7.0]])
    out = ad.matmul(Tensor(np.eye(2)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_forced_product():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0], [1.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[2.0], [4.0]])


def test_matmul_shape_mismatch_reports_dimensions():
    with pytest.raises(ValueError, match=r"3.*2|\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences(rng):
    a = param(rng.standard_normal((3, 4)))
    b = param(rng.standard_normal((4, 2)))

    def loss_value():
        return float(ad.matmul(Tensor(a.data), Tensor(b.data)).data.sum())

    a.zero_grad()
    b.zero_grad()
    with Graph() as g:
        g.backward(ad.sum_(ad.matmul(a, b)))
    for p in (a, b):
        fd = finite_difference(loss_value, p.data)
        assert max_rel_err(p.grad, fd) < 1e-6


def test_matmul_associativity(rng):
    for _ in range(5):
        a, b, c = (rng.standard_normal((4, 4)) for _ in range(3))
        left = ad.matmul(ad.matmul(Tensor(a), Tensor(b)), Tensor(c)).data
        right = ad.matmul(Tensor(a), ad.matmul(Tensor(b), Tensor(c))).data
        assert np.abs(left - right).max() < 1e-9


# ---------------------------------------------------------------------------
# softmax_rows
# ---------------------------------------------------------------------------

def test_softmax_zero_row_is_uniform():
    out = ad.softmax_rows(Tensor(np.zeros((1, 4))))
    np.testing.assert_allclose(out.data, np.full((1, 4), 0.25), atol=1e-15)


def test_softmax_large_equal_entries_stable():
    out = ad.softmax_rows(Tensor([[1000.0, 1000.0]]))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_matches_direct_arithmetic():
    row = np.array([[1.0, 2.0, 3.0]])
    expect = np.exp(row - row.max())
    expect /= expect.sum()
    out = ad.softmax_rows(Tensor(row))
    assert np.abs(out.data - expect).max() < 1e-12


def test_softmax_rejects_nan():
    with pytest.raises(ValueError):
        ad.softmax_rows(Tensor([[np.nan, 0.0]]))


def test_softmax_rows_sum_to_one_entries_in_unit_interval(rng):
    x = rng.standard_normal((8, 5)) * 10
    out = ad.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert (out > 0).all() and (out < 1).all()


# ---------------------------------------------------------------------------
# layer_norm
# ---------------------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 4), 3.7))
    out = ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_two_point_row_oracle():
    # direct arithmetic with the 1e-5 variance epsilon
    row = np.array([1.0, -1.0])
    expect = (row - row.mean()) / np.sqrt(row.var() + 1e-5)
    out = ad.layer_norm(Tensor(row[None]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.abs(out.data[0] - expect).max() < 1e-12
    assert abs(out.data[0, 0] - 0.99999) < 1e-4


def test_layer_norm_gradient_matches_finite_differences(rng):
    x = param(rng.standard_normal((3, 5)))
    gain = param(rng.standard_normal(5))
    bias = param(rng.standard_normal(5))
    w = rng.standard_normal((3, 5))   # fixed mixing so the loss is non-trivial

    def loss_value():
        out = ad.layer_norm(Tensor(x.data), Tensor(gain.data), Tensor(bias.data))
        return float((out.data * w).sum())

    for p in (x, gain, bias):
        p.zero_grad()
    with Graph() as g:
        out = ad.layer_norm(x, gain, bias)
        g.backward(ad.sum_(ad.mul(out, Tensor(w))))
    for p in (x, gain, bias):
        fd = finite_difference(loss_value, p.data)
        assert max_rel_err(p.grad, fd) < 1e-5


# ---------------------------------------------------------------------------
# conv2d_patch
# ---------------------------------------------------------------------------

def test_conv2d_patch_identity_kernels(rng):
    nc, r = 3, 5
    x = rng.standard_normal((nc, r, r))
    kernels = np.zeros((nc, nc, 1, 1))
    for c in range(nc):
        kernels[c, c, 0, 0] = 1.0
    out = ad.conv2d_patch(Tensor(x), Tensor(kernels), stride=1)
    np.testing.assert_allclose(out.data, x, atol=1e-15)


def test_conv2d_patch_shipped_shape(rng):
    x = rng.standard_normal((3, 7, 7))
    kernels = rng.standard_normal((64, 3, 1, 1))
    out = ad.conv2d_patch(Tensor(x), Tensor(kernels), stride=1)
    assert out.shape == (64, 7, 7)


def test_conv2d_patch_channel_mismatch_rejected(rng):
    x = rng.standard_normal((3, 7, 7))
    kernels = rng.standard_normal((8, 4, 1, 1))
    with pytest.raises(ValueError):
        ad.conv2d_patch(Tensor(x), Tensor(kernels), stride=1)


def test_conv2d_patch_kernel_gradient_matches_finite_differences(rng):
    x = rng.standard_normal((2, 4, 4))
    kernels = param(rng.standard_normal((3, 2, 2, 2)))
    bias = param(rng.standard_normal(3))
    w = rng.standard_normal((3, 2, 2))

    def loss_value():
        out = ad.conv2d_patch(Tensor(x), Tensor(kernels.data),
                              bias=Tensor(bias.data), stride=2)
        return float((out.data * w).sum())

    kernels.zero_grad()
    bias.zero_grad()
    with Graph() as g:
        out = ad.conv2d_patch(Tensor(x), kernels, bias=bias, stride=2)
        g.backward(ad.sum_(ad.mul(out, Tensor(w))))
    for p in (kernels, bias):
        fd = finite_difference(loss_value, p.data)
        assert max_rel_err(p.grad, fd) < 1e-5


# ---------------------------------------------------------------------------
# adam_step
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params_unchanged():
    p = param(np.array([1.0, 2.0]))
    p.zero_grad()
    state = OptimizerState({"p": p}, lr=1e-2)
    adam_step(state)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert state.step_count == 1


def test_adam_first_step_moves_by_lr():
    # closed form: step 1 with grad g has bias-corrected m̂=g, v̂=g², so the
    # update is -lr·g/(|g|+eps) ≈ -lr·sign(g)
    p = param(np.array([0.0]))
    p.grad = np.array([1.0])
    state = OptimizerState({"p": p}, lr=1e-3)
    adam_step(state)
    assert abs(p.data[0] - (-1e-3)) < 1e-8


def test_adam_identical_params_stay_identical(rng):
    a = param(np.array([0.3, -0.7]))
    b = param(np.array([0.3, -0.7]))
    state = OptimizerState({"a": a, "b": b}, lr=1e-2)
    for _ in range(17):
        g = rng.standard_normal(2)
        a.grad = g.copy()
        b.grad = g.copy()
        adam_step(state)
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_missing_gradient_rejected():
    p = param(np.array([1.0]))
    state = OptimizerState({"p": p}, lr=1e-2)
    with pytest.raises(ValueError):
        adam_step(state)


def test_zero_grads_resets_all():
    p = param(np.array([1.0, 2.0]))
    p.grad = np.array([3.0, 4.0])
    zero_grads({"p": p})
    np.testing.assert_array_equal(p.grad, [0.0, 0.0])


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_sum_gives_ones(rng):
    x = param(rng.standard_normal((3, 4)))
    x.zero_grad()
    with Graph() as g:
        g.backward(ad.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_softmax_sum_is_conserved(rng):
    x = param(rng.standard_normal((3, 4)))
    x.zero_grad()
    with Graph() as g:
        g.backward(ad.sum_(ad.softmax_rows(x)))
    assert np.abs(x.grad).max() < 1e-10


def test_backward_rejects_non_scalar(rng):
    x = param(rng.standard_normal((2, 2)))
    with Graph() as g:
        y = ad.scale(x, 2.0)
        with pytest.raises(ValueError):
            g.backward(y)


def test_backward_twice_accumulates_exactly_double(rng):
    x = param(rng.standard_normal((2, 3)))
    x.zero_grad()
    with Graph() as g:
        loss = ad.sum_(ad.mul(x, x))
        g.backward(loss)
        once = x.grad.copy()
        g.backward(loss)
    np.testing.assert_array_equal(x.grad, 2.0 * once)


def test_unreachable_leaf_keeps_zero_gradient(rng):
    x = param(rng.standard_normal(3))
    y = param(rng.standard_normal(3))
    x.zero_grad()
    y.zero_grad()
    with Graph() as g:
        g.backward(ad.sum_(x))
    np.testing.assert_array_equal(y.grad, np.zeros(3))


def test_no_tape_suppresses_recording(rng):
    x = param(rng.standard_normal(3))
    x.zero_grad()
    with Graph() as g:
        with no_tape():
            ad.sum_(ad.mul(x, x))
        assert g.nodes == []
        g.backward(ad.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones(3))


# ---------------------------------------------------------------------------
# randomized gradient checks for every differentiable op
# ---------------------------------------------------------------------------

def _op_cases(rng):
    """(name, build(params) -> Tensor, params) triples for gradient checks."""
    cases = []

    def case(name, build, *shapes):
        params = [param(rng.standard_normal(s)) for s in shapes]
        cases.append((name, build, params))

    case("add", lambda a, b: ad.add(a, b), (3, 4), (3, 4))
    case("add_broadcast", lambda a, b: ad.add(a, b), (3, 4), (4,))
    case("sub", lambda a, b: ad.sub(a, b), (3, 4), (3, 4))
    case("neg", lambda a: ad.neg(a), (3, 4))
    case("mul", lambda a, b: ad.mul(a, b), (3, 4), (3, 4))
    case("mul_broadcast", lambda a, b: ad.mul(a, b), (2, 3, 4), (4,))
    case("scale", lambda a: ad.scale(a, -1.7), (5,))
    case("reshape", lambda a: ad.reshape(a, (4, 3)), (3, 4))
    case("transpose", lambda a: ad.transpose(a, (1, 0, 2)), (2, 3, 4))
    case("concat", lambda a, b: ad.concat([a, b], axis=1), (2, 3), (2, 2))
    case("broadcast_to", lambda a: ad.broadcast_to(a, (3, 2, 4)), (2, 4))
    case("select", lambda a: ad.select(a, axis=1, index=2), (3, 4))
    case("sum", lambda a: ad.sum_(a, axis=0), (3, 4))
    case("mean", lambda a: ad.mean(a, axis=1), (3, 4))
    case("relu", lambda a: ad.relu(a), (3, 4))
    case("gelu", lambda a: ad.gelu(a), (3, 4))
    case("cos", lambda a: ad.cos(a), (3, 4))
    case("huber", lambda a: ad.huber(a, kappa=1.0), (3, 4))
    case("matmul", lambda a, b: ad.matmul(a, b), (3, 4), (4, 2))
    case("matmul_batched", lambda a, b: ad.matmul(a, b), (2, 2, 3, 4), (2, 2, 4, 2))
    case("softmax_rows", lambda a: ad.softmax_rows(a), (3, 4))
    case("layer_norm", lambda x, g_, b: ad.layer_norm(x, g_, b), (3, 5), (5,), (5,))
    case("conv2d_patch",
         lambda x, k, b: ad.conv2d_patch(x, k, bias=b, stride=2),
         (2, 4, 4), (3, 2, 2, 2), (3,))
    case("conv2d",
         lambda x, k, b: ad.conv2d(x, k, bias=b, padding=1),
         (1, 2, 5, 5), (3, 2, 3, 3), (3,))
    case("maxpool2d", lambda x: ad.maxpool2d(x, window=2), (1, 2, 4, 4))
    idx = rng.integers(0, 4, size=(3, 1))
    case("take_along", lambda a: ad.take_along(a, idx, axis=1), (3, 4))
    return cases


def test_randomized_gradient_check_every_op():
    for trial in range(5):
        rng = np.random.default_rng(1000 + trial)
        for name, build, params in _op_cases(rng):
            w = rng.standard_normal(build(*params).shape)

            def loss_value():
                frozen = [Tensor(p.data) for p in params]
                return float((build(*frozen).data * w).sum())

            for p in params:
                p.zero_grad()
            with Graph() as g:
                g.backward(ad.sum_(ad.mul(build(*params), Tensor(w))))
            for k, p in enumerate(params):
                fd = finite_difference(loss_value, p.data)
                err = max_rel_err(p.grad, fd)
                assert err < 1e-4, f"{name} param {k}: rel err {err}"


def test_huber_values():
    # |x| <= kappa: x²/2; beyond: kappa(|x| - kappa/2)
    x = np.array([-3.0, -0.5, 0.0, 0.5, 2.0])
    expect = np.where(np.abs(x) <= 1.0, 0.5 * x**2, np.abs(x) - 0.5)
    np.testing.assert_allclose(ad.huber(Tensor(x), kappa=1.0).data, expect,
                               atol=1e-15)


def test_gelu_matches_erf_formula(rng):
    from scipy.special import erf
    x = rng.standard_normal(100)
    expect = 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
    np.testing.assert_allclose(ad.gelu(Tensor(x)).data, expect, atol=1e-12)
