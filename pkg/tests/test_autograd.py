"""Gradient and contract tests for the autodiff engine."""

import numpy as np
import pytest

from fsat import autograd as ag
from fsat.autograd import GraphError, NumericsError, Tensor, backward

from gradcheck import numeric_gradient, relative_error

N_INSTANCES = 10
TOL = 1e-4


def check_op(build, arrays_for, seed):
    """FD-check d(sum of op output)/d(each input) on one random instance.

    ``build`` maps a list of Tensors to the op output tensor;
    ``arrays_for`` produces the raw input arrays from a Generator.
    """
    rng = np.random.default_rng(seed)
    arrays = arrays_for(rng)

    def scalar_fn(raw):
        ts = [Tensor(a) for a in raw]
        return float(build(ts).data.sum())

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(tensors)
    backward(ag.tsum(out))
    for i, t in enumerate(tensors):
        numeric = numeric_gradient(scalar_fn, arrays, i)
        assert t.grad is not None, f"input {i} received no gradient"
        err = relative_error(t.grad, numeric)
        assert err < TOL, f"input {i}: relative error {err}"


def _r(rng, *shape):
    return rng.standard_normal(shape)


OP_CASES = {
    "add": (lambda ts: ag.add(ts[0], ts[1]), lambda rng: [_r(rng, 3, 4), _r(rng, 3, 4)]),
    "add_broadcast": (lambda ts: ag.add(ts[0], ts[1]), lambda rng: [_r(rng, 3, 4), _r(rng, 4)]),
    "sub": (lambda ts: ag.sub(ts[0], ts[1]), lambda rng: [_r(rng, 2, 5), _r(rng, 2, 5)]),
    "mul": (lambda ts: ag.mul(ts[0], ts[1]), lambda rng: [_r(rng, 4, 3), _r(rng, 4, 3)]),
    "mul_broadcast": (lambda ts: ag.mul(ts[0], ts[1]), lambda rng: [_r(rng, 2, 3, 4), _r(rng, 3, 1)]),
    "div": (lambda ts: ag.div(ts[0], ts[1]), lambda rng: [_r(rng, 3, 3), _r(rng, 3, 3) + 3.0]),
    "neg": (lambda ts: ag.neg(ts[0]), lambda rng: [_r(rng, 5)]),
    "exp": (lambda ts: ag.exp(ts[0]), lambda rng: [_r(rng, 4, 2)]),
    "log": (lambda ts: ag.log(ts[0]), lambda rng: [rng.random((3, 3)) + 0.5]),
    "sqrt": (lambda ts: ag.sqrt(ts[0]), lambda rng: [rng.random((3, 3)) + 0.5]),
    "relu": (
        lambda ts: ag.relu(ts[0]),
        lambda rng: [np.where(np.abs(_r(rng, 4, 4)) < 0.05, 0.5, _r(rng, 4, 4))],
    ),
    "clamp": (lambda ts: ag.clamp(ts[0], -0.7, 0.7), lambda rng: [_r(rng, 5, 5) * 2]),
    "reshape": (lambda ts: ag.reshape(ts[0], (6, 2)), lambda rng: [_r(rng, 3, 4)]),
    "transpose": (lambda ts: ag.transpose(ts[0], (1, 2, 0)), lambda rng: [_r(rng, 2, 3, 4)]),
    "concatenate": (
        lambda ts: ag.concatenate(ts, axis=1),
        lambda rng: [_r(rng, 2, 3), _r(rng, 2, 2)],
    ),
    "sum_axes": (lambda ts: ag.tsum(ts[0], axes=(0, 2)), lambda rng: [_r(rng, 2, 3, 4)]),
    "sum_keepdims": (lambda ts: ag.tsum(ts[0], axes=1, keepdims=True), lambda rng: [_r(rng, 3, 4)]),
    "mean": (lambda ts: ag.tmean(ts[0], axes=(2, 3)), lambda rng: [_r(rng, 2, 3, 4, 4)]),
    "variance": (lambda ts: ag.variance(ts[0], axes=(2, 3)), lambda rng: [_r(rng, 2, 3, 4, 4)]),
    "l2norm": (lambda ts: ag.l2norm(ts[0], axes=(1,)), lambda rng: [_r(rng, 3, 6) + 0.1]),
    "matmul": (lambda ts: ag.matmul(ts[0], ts[1]), lambda rng: [_r(rng, 3, 4), _r(rng, 4, 2)]),
    "linear": (
        lambda ts: ag.linear(ts[0], ts[1], ts[2]),
        lambda rng: [_r(rng, 3, 4), _r(rng, 4, 2), _r(rng, 2)],
    ),
    "conv2d": (
        lambda ts: ag.conv2d(ts[0], ts[1], ts[2], stride=1, padding=1),
        lambda rng: [_r(rng, 2, 3, 5, 5), _r(rng, 4, 3, 3, 3), _r(rng, 4)],
    ),
    "conv2d_stride2": (
        lambda ts: ag.conv2d(ts[0], ts[1], None, stride=2, padding=0),
        lambda rng: [_r(rng, 1, 2, 7, 7), _r(rng, 3, 2, 3, 3)],
    ),
    "reflect_pad2d": (lambda ts: ag.reflect_pad2d(ts[0], 1), lambda rng: [_r(rng, 2, 2, 4, 4)]),
    "max_pool2d": (lambda ts: ag.max_pool2d(ts[0]), lambda rng: [_r(rng, 2, 3, 4, 4)]),
    "upsample_nearest2": (lambda ts: ag.upsample_nearest2(ts[0]), lambda rng: [_r(rng, 2, 3, 3, 3)]),
    "softmax_cross_entropy": (
        lambda ts: ag.softmax_cross_entropy(ts[0], np.array([0, 2, 1])),
        lambda rng: [_r(rng, 3, 4)],
    ),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_gradients_match_finite_differences(name, seed):
    build, arrays_for = OP_CASES[name]
    check_op(build, arrays_for, seed=1000 + seed)


class TestConv2d:
    def test_scaling_identity(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.full((1, 1, 1, 1), 2.0))
        b = Tensor(np.zeros(1))
        out = ag.conv2d(x, w, b)
        assert np.array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_zero_input_yields_bias(self):
        rng = np.random.default_rng(3)
        x = Tensor(np.zeros((2, 3, 6, 6)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        b = Tensor(np.array([0.5, -1.0, 2.0, 0.0]))
        out = ag.conv2d(x, w, b, padding=1)
        expected = np.broadcast_to(b.data[None, :, None, None], (2, 4, 6, 6))
        assert np.allclose(out.data, expected)

    def test_matches_naive_loop_reference(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))

        # Independent six-nested-loop cross-correlation.
        ref = np.zeros((1, 3, 3, 3))
        for co in range(3):
            for oh in range(3):
                for ow in range(3):
                    acc = 0.0
                    for ci in range(2):
                        for kh in range(3):
                            for kw in range(3):
                                acc += x[0, ci, oh + kh, ow + kw] * w[co, ci, kh, kw]
                    ref[0, co, oh, ow] = acc

        out = ag.conv2d(Tensor(x), Tensor(w), None)
        assert np.max(np.abs(out.data - ref)) < 1e-12

    def test_output_shape_formula(self):
        x = Tensor(np.zeros((1, 1, 11, 9)))
        w = Tensor(np.zeros((2, 1, 3, 3)))
        out = ag.conv2d(x, w, None, stride=2, padding=1)
        assert out.data.shape == (1, 2, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_shape_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 3, 5, 5)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(GraphError):
            ag.conv2d(x, w, None)

    def test_even_kernel_rejected(self):
        with pytest.raises(GraphError):
            ag.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))), None)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(ag.tsum(x * x))
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_spatial_mean_of_constant(self):
        x = Tensor(np.full((1, 1, 4, 8), 3.3), requires_grad=True)
        backward(ag.tsum(ag.tmean(x, axes=(2, 3))))
        assert np.allclose(x.grad, 1.0 / 32.0)

    def test_diamond_fanout_accumulates(self):
        # d/dx (2x + 3x) = 5 and d/dx (x*x + x*x) = 4x, both by hand.
        x = Tensor([2.0], requires_grad=True)
        backward(ag.tsum(x * 2.0 + x * 3.0))
        assert np.allclose(x.grad, [5.0])

        y = Tensor([3.0], requires_grad=True)
        sq = y * y
        backward(ag.tsum(sq + sq))
        assert np.allclose(y.grad, [12.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            backward(x * x)

    def test_grad_only_for_requires_grad_leaves(self):
        a = Tensor([1.0], requires_grad=True)
        b = Tensor([2.0])
        backward(ag.tsum(a * b))
        assert a.grad is not None
        assert b.grad is None

    def test_tape_consumed(self):
        x = Tensor([1.0], requires_grad=True)
        out = x * x
        backward(ag.tsum(out))
        assert out._backward is None and out._parents == ()


class TestNumerics:
    def test_division_by_zero_aborts(self):
        with pytest.raises(NumericsError):
            Tensor([1.0]) / Tensor([0.0])

    def test_sqrt_of_negative_aborts(self):
        with pytest.raises(NumericsError):
            ag.sqrt(Tensor([-1.0]))

    def test_overflowing_exp_aborts(self):
        with pytest.raises(NumericsError):
            ag.exp(Tensor([1000.0]))

    def test_backward_overflow_aborts(self):
        x = Tensor([1e-310], requires_grad=True)
        loss = ag.tsum(ag.log(x))
        with pytest.raises(NumericsError):
            backward(loss)


class TestDeterminism:
    def _run(self):
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((4, 3, 8, 8)), requires_grad=True)
        w = Tensor(rng.standard_normal((5, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(5), requires_grad=True)
        h = ag.relu(ag.conv2d(x, w, b, padding=1))
        h = ag.max_pool2d(h)
        loss = ag.tsum(ag.variance(h, axes=(2, 3)))
        backward(loss)
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes(), b.grad.tobytes()

    def test_bit_identical_across_runs(self):
        assert self._run() == self._run()


class TestPooling:
    def test_tie_break_is_first_element(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        out = ag.max_pool2d(x)
        backward(ag.tsum(out))
        # All four candidates tie; the gradient must go to exactly one.
        assert x.grad.sum() == 1.0
        assert x.grad[0, 0, 0, 0] == 1.0

    def test_odd_extent_rejected(self):
        with pytest.raises(GraphError):
            ag.max_pool2d(Tensor(np.zeros((1, 1, 3, 4))))


class TestUpsample:
    def test_repeats_pixels(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = ag.upsample_nearest2(x)
        assert np.array_equal(
            out.data[0, 0],
            np.array(
                [
                    [1.0, 1.0, 2.0, 2.0],
                    [1.0, 1.0, 2.0, 2.0],
                    [3.0, 3.0, 4.0, 4.0],
                    [3.0, 3.0, 4.0, 4.0],
                ]
            ),
        )


class TestReflectPad:
    def test_mirrors_without_edge_repeat(self):
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        out = ag.reflect_pad2d(x, 1)
        expected = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
        assert np.array_equal(out.data, expected)

    def test_pad_too_large_rejected(self):
        with pytest.raises(GraphError):
            ag.reflect_pad2d(Tensor(np.zeros((1, 1, 2, 2))), 2)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((1, 10)))
        ce = ag.softmax_cross_entropy(logits, np.array([3]))
        assert np.allclose(ce.data, np.log(10.0))

    def test_label_shape_checked(self):
        with pytest.raises(GraphError):
            ag.softmax_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0]))
