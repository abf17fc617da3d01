import math

import numpy as np
import pytest

from msmae.tensor import (
    ParamStore,
    ShapeError,
    Tensor,
    concat,
    conv2d,
    cross_entropy_logits,
    gelu,
    l1_loss,
    layer_norm,
    leaky_relu,
    matmul,
    mse_loss,
    multilabel_soft_margin,
    no_grad,
    softmax,
    take,
    transpose_conv2d,
    trunc_normal,
)

from conftest import assert_grad_close, finite_diff_grad


class TestMatmul:
    def test_identity(self):
        eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
        m = Tensor([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(matmul(eye, m).data, m.data)

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(
            matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]]
        )

    def test_grad_of_sum_is_ones_times_bt(self, rng):
        a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, (4, 5)))
        matmul(a, b).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 5)) @ b.data.T)

    def test_grad_matches_finite_differences(self, rng):
        a = Tensor(rng.uniform(-2, 2, (2, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, (3, 2)), requires_grad=True)
        loss = lambda: (matmul(a, b) * matmul(a, b)).sum()
        loss().backward()
        assert_grad_close(a.grad, finite_diff_grad(loss, a))
        assert_grad_close(b.grad, finite_diff_grad(loss, b))

    def test_batched_broadcast(self, rng):
        a = Tensor(rng.uniform(-1, 1, (4, 2, 3, 5)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (5, 6)), requires_grad=True)
        out = matmul(a, w)
        assert out.shape == (4, 2, 3, 6)
        out.sum().backward()
        assert w.grad.shape == (5, 6)
        assert a.grad.shape == a.shape

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestSoftmax:
    def test_uniform_input(self):
        out = softmax(Tensor([0.0, 0.0, 0.0, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [0.25] * 4)

    def test_stable_under_constant_shift(self):
        out = softmax(Tensor([1000.0, 1000.0]), axis=-1)
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_closed_form(self):
        out = softmax(Tensor([0.0, math.log(3.0)]), axis=-1)
        np.testing.assert_allclose(out.data, [0.25, 0.75], rtol=1e-12)

    def test_sums_to_one_at_extremes(self, rng):
        x = Tensor(rng.uniform(-1e3, 1e3, (50, 7)))
        out = softmax(x, axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)
        assert (out.data >= 0).all()

    def test_grad_matches_finite_differences(self, rng):
        x = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        w = rng.uniform(-1, 1, (3, 4))
        loss = lambda: (softmax(x, axis=1) * Tensor(w)).sum()
        loss().backward()
        assert_grad_close(x.grad, finite_diff_grad(loss, x))


class TestLayerNorm:
    def test_constant_slice_is_zeroed(self):
        x = Tensor(np.full((2, 5), 3.7))
        out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_slice(self):
        out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-3)

    def test_grad_matches_finite_differences(self, rng):
        x = Tensor(rng.uniform(-2, 2, (3, 6)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
        b = Tensor(rng.uniform(-0.5, 0.5, 6), requires_grad=True)
        w = rng.uniform(-1, 1, (3, 6))
        loss = lambda: (layer_norm(x, g, b) * Tensor(w)).sum()
        loss().backward()
        assert_grad_close(x.grad, finite_diff_grad(loss, x), rtol=1e-4)
        assert_grad_close(g.grad, finite_diff_grad(loss, g), rtol=1e-4)
        assert_grad_close(b.grad, finite_diff_grad(loss, b), rtol=1e-4)

    def test_gain_shape_checked(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


class TestActivations:
    def test_leaky_relu_values(self):
        out = leaky_relu(Tensor([0.0, -2.0, 3.0]), slope=0.01)
        np.testing.assert_allclose(out.data, [0.0, -0.02, 3.0])

    def test_leaky_relu_grad_at_zero_takes_positive_branch(self):
        x = Tensor([0.0], requires_grad=True)
        leaky_relu(x).sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_leaky_relu_slope_validated(self):
        with pytest.raises(ValueError):
            leaky_relu(Tensor([1.0]), slope=1.5)

    def test_gelu_at_zero(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0

    def test_gelu_at_one(self):
        # tanh approximation: 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
        expected = 0.5 * (1.0 + math.tanh(0.7978845608028654 * 1.044715))
        np.testing.assert_allclose(gelu(Tensor([1.0])).data[0], expected, rtol=1e-12)
        np.testing.assert_allclose(expected, 0.8412, atol=5e-5)

    def test_activation_grads_match_finite_differences(self, rng):
        for op in (gelu, leaky_relu):
            x = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
            loss = lambda: (op(x) * op(x)).sum()
            loss().backward()
            assert_grad_close(x.grad, finite_diff_grad(loss, x))


class TestConv2d:
    def test_one_by_one_identity(self, rng):
        x = Tensor(rng.uniform(0, 1, (1, 1, 5, 5)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(conv2d(x, w).data, x.data)

    def test_all_ones_sum(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        np.testing.assert_array_equal(conv2d(x, w).data, [[[[9.0]]]])

    def test_output_extent_formula(self, rng):
        x = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
        w = Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)))
        assert conv2d(x, w, pad=1).shape == (2, 4, 8, 8)
        assert conv2d(x, w, stride=1).shape == (2, 4, 6, 6)

    def test_non_integral_output_rejected(self):
        x = Tensor(np.zeros((1, 1, 5, 5)))
        w = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ShapeError):
            conv2d(x, w, stride=2)

    def test_grad_matches_finite_differences(self, rng):
        x = Tensor(rng.uniform(-2, 2, (2, 2, 4, 4)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
        target = rng.uniform(-1, 1, (2, 3, 4, 4))
        loss = lambda: mse_loss(conv2d(x, w, b, pad=1), Tensor(target))
        loss().backward()
        assert_grad_close(x.grad, finite_diff_grad(loss, x))
        assert_grad_close(w.grad, finite_diff_grad(loss, w))
        assert_grad_close(b.grad, finite_diff_grad(loss, b))

    def test_strided_grad_matches_finite_differences(self, rng):
        x = Tensor(rng.uniform(-2, 2, (1, 2, 6, 6)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (2, 2, 2, 2)), requires_grad=True)
        loss = lambda: (conv2d(x, w, stride=2) ** 2.0).sum()
        loss().backward()
        assert_grad_close(x.grad, finite_diff_grad(loss, x))
        assert_grad_close(w.grad, finite_diff_grad(loss, w))


class TestTransposeConv2d:
    def test_doubles_spatial_extents(self, rng):
        x = Tensor(rng.uniform(-1, 1, (1, 1, 2, 2)))
        w = Tensor(rng.uniform(-1, 1, (1, 3, 2, 2)))
        assert transpose_conv2d(x, w).shape == (1, 3, 4, 4)

    def test_single_pixel_emits_kernel_tile(self):
        x = Tensor(np.full((1, 1, 1, 1), 2.0))
        w = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = transpose_conv2d(x, w)
        np.testing.assert_array_equal(out.data[0, 0], [[2.0, 4.0], [6.0, 8.0]])

    def test_adjoint_of_strided_conv(self, rng):
        for _ in range(20):
            B, C, O, H, W = (
                int(rng.integers(1, 3)),
                int(rng.integers(1, 4)),
                int(rng.integers(1, 4)),
                int(rng.integers(1, 5)),
                int(rng.integers(1, 5)),
            )
            y = rng.standard_normal((B, C, 2 * H, 2 * W))
            x = rng.standard_normal((B, O, H, W))
            w = rng.standard_normal((O, C, 2, 2))
            lhs = (conv2d(Tensor(y), Tensor(w), stride=2).data * x).sum()
            rhs = (transpose_conv2d(Tensor(x), Tensor(w)).data * y).sum()
            assert abs(lhs - rhs) < 1e-6 * max(1.0, abs(lhs))

    def test_unsupported_configuration_rejected(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        w = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ValueError, match="k=stride=2"):
            transpose_conv2d(x, w, stride=3)

    def test_grad_matches_finite_differences(self, rng):
        x = Tensor(rng.uniform(-2, 2, (1, 2, 3, 3)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (2, 2, 2, 2)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, 2), requires_grad=True)
        loss = lambda: (transpose_conv2d(x, w, b) ** 2.0).sum()
        loss().backward()
        assert_grad_close(x.grad, finite_diff_grad(loss, x))
        assert_grad_close(w.grad, finite_diff_grad(loss, w))
        assert_grad_close(b.grad, finite_diff_grad(loss, b))


class TestLosses:
    def test_identical_tensors_give_zero(self, rng):
        x = Tensor(rng.uniform(0, 1, (3, 4)))
        assert mse_loss(x, x).item() == 0.0
        assert l1_loss(x, x).item() == 0.0

    def test_hand_values(self):
        pred = Tensor([0.0, 0.0])
        target = Tensor([1.0, 3.0])
        assert mse_loss(pred, target).item() == pytest.approx(5.0)
        assert l1_loss(pred, target).item() == pytest.approx(2.0)

    def test_l1_grad_is_sign_over_n(self):
        pred = Tensor([1.0, -2.0, 0.5], requires_grad=True)
        target = Tensor([0.0, 0.0, 0.5])
        l1_loss(pred, target).backward()
        np.testing.assert_allclose(pred.grad, [1 / 3, -1 / 3, 0.0])

    def test_loss_grads_match_finite_differences(self, rng):
        pred = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
        target = Tensor(rng.uniform(-2, 2, (4, 3)))
        for fn in (mse_loss, l1_loss):
            pred.zero_grad()
            loss = lambda: fn(pred, target)
            loss().backward()
            assert_grad_close(pred.grad, finite_diff_grad(loss, pred))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_cross_entropy_matches_finite_differences(self, rng):
        logits = Tensor(rng.uniform(-2, 2, (5, 4)), requires_grad=True)
        labels = rng.integers(0, 4, 5)
        loss = lambda: cross_entropy_logits(logits, labels)
        loss().backward()
        assert_grad_close(logits.grad, finite_diff_grad(loss, logits))

    def test_multilabel_soft_margin_matches_finite_differences(self, rng):
        logits = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
        targets = rng.integers(0, 2, (4, 5)).astype(float)
        loss = lambda: multilabel_soft_margin(logits, targets)
        loss().backward()
        assert_grad_close(logits.grad, finite_diff_grad(loss, logits))

    def test_multilabel_soft_margin_value(self):
        # single logit x with y=1: loss = log(1 + e^-x)
        out = multilabel_soft_margin(Tensor([[2.0]]), np.array([[1.0]]))
        assert out.item() == pytest.approx(math.log(1 + math.exp(-2.0)))


class TestBackward:
    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_diamond_graph_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])  # 2x + 1 at x=2

    def test_repeated_backward_accumulates_into_leaves(self):
        x = Tensor([3.0], requires_grad=True)
        y = (x * x).sum()
        y.backward()
        y.backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2.0).backward()

    def test_no_grad_blocks_graph(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad
        assert y._backward is None

    def test_broadcast_add_grad(self, rng):
        x = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
        ((x + b) ** 2.0).sum().backward()
        fd = finite_diff_grad(lambda: ((x + b) ** 2.0).sum(), b)
        assert_grad_close(b.grad, fd)

    def test_take_and_concat_grads(self, rng):
        x = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
        idx = np.array([0, 2, 2, 4])
        loss = lambda: (take(x, idx, axis=0) ** 2.0).sum()
        loss().backward()
        assert_grad_close(x.grad, finite_diff_grad(loss, x))

        a = Tensor(rng.uniform(-1, 1, (2, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
        loss = lambda: (concat([a, b], axis=0) ** 2.0).sum()
        loss().backward()
        assert_grad_close(a.grad, finite_diff_grad(loss, a))
        assert_grad_close(b.grad, finite_diff_grad(loss, b))


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor(rng.uniform(-2, 2, (6, 6)), requires_grad=True)
            w = Tensor(trunc_normal(rng, (6, 6)), requires_grad=True)
            loss = mse_loss(softmax(matmul(x, w), axis=1), Tensor(np.zeros((6, 6))))
            loss.backward()
            return loss.item(), x.grad.copy(), w.grad.copy()

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gw1, gw2)


class TestParamStore:
    def test_names_unique(self):
        store = ParamStore()
        store.add("w", np.zeros(3))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", np.zeros(3))

    def test_iteration_order_is_insertion_order(self):
        store = ParamStore()
        for name in ("zeta", "alpha", "mid"):
            store.add(name, np.zeros(1))
        assert store.names() == ["zeta", "alpha", "mid"]

    def test_zero_grads(self):
        store = ParamStore()
        t = store.add("w", np.ones(2))
        (t * t).sum().backward()
        assert t.grad is not None
        store.zero_grads()
        assert t.grad is None

    def test_load_arrays_shape_checked(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 2)))
        with pytest.raises(ShapeError, match="w"):
            store.load_arrays({"w": np.zeros((3, 2))})
        with pytest.raises(KeyError):
            store.load_arrays({"v": np.zeros((2, 2))})
