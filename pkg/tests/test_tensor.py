"""Forward-value and gradient-oracle tests for the autodiff engine.

Every differentiable op is checked against central finite differences
(h = 1e-5, float64). Inputs for kinked ops (relu, abs, interpolation at
integer positions) are kept away from the kinks so the oracle is valid.
"""

import numpy as np
import pytest

from alignnet import tensor as T
from alignnet.tensor import Tensor


H = 1e-5
REL_TOL = 1e-4


def finite_diff(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Central-difference gradient of scalar-valued f() w.r.t. array x, in place."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def check_grads(build, arrays: list[np.ndarray], seed: int = 0) -> None:
    """Compare analytic and finite-difference grads of sum(w * build(tensors))."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    w = rng.normal(size=out.shape)

    loss = T.tsum(T.mul(out, Tensor(w)))
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]

    def scalar():
        ts = [Tensor(a) for a in arrays]
        return float((build(*ts).data * w).sum())

    for a, arr in zip(analytic, arrays):
        fd = finite_diff(scalar, arr)
        assert rel_err(a, fd) < REL_TOL


class TestConv1d:
    def test_hand_example(self):
        x = Tensor([[1.0, 2.0, 3.0]])
        k = Tensor(np.array([[[1.0, 0.0, -1.0]]]))
        b = Tensor([0.0])
        out = T.conv1d(x, k, b, stride=1, padding=1)
        np.testing.assert_allclose(out.data, [[-2.0, -2.0, 2.0]])

    def test_delta_kernel_identity(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, 11)))
        k = np.zeros((3, 3, 3))
        for c in range(3):
            k[c, c, 1] = 1.0
        out = T.conv1d(x, Tensor(k), None, stride=1, padding=1)
        np.testing.assert_allclose(out.data, x.data)

    def test_zero_input_gives_bias(self):
        x = Tensor(np.zeros((2, 7)))
        k = Tensor(np.random.default_rng(2).normal(size=(4, 2, 3)))
        b = Tensor([1.0, -2.0, 0.5, 3.0])
        out = T.conv1d(x, k, b, stride=1, padding=1)
        for c, bv in enumerate(b.data):
            np.testing.assert_allclose(out.data[c], bv)

    def test_output_length(self):
        for t, k, s, p in [(10, 3, 1, 0), (10, 3, 2, 1), (9, 3, 3, 1), (5, 5, 1, 2)]:
            x = Tensor(np.zeros((1, t)))
            kern = Tensor(np.zeros((1, 1, k)))
            out = T.conv1d(x, kern, None, stride=s, padding=p)
            assert out.shape[1] == (t + 2 * p - k) // s + 1

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(2, 3, 12))
        k = Tensor(rng.normal(size=(2, 3, 3)))
        a, b = 1.7, -0.4

        def conv(arr):
            return T.conv1d(Tensor(arr), k, None, stride=2, padding=1).data

        np.testing.assert_allclose(conv(a * x + b * y), a * conv(x) + b * conv(y),
                                   rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_error(self):
        x = Tensor(np.zeros((3, 8)))
        k = Tensor(np.zeros((2, 4, 3)))
        with pytest.raises(T.ShapeError, match="3.*4|4.*3"):
            T.conv1d(x, k)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 1)])
    def test_gradients(self, stride, padding):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 10))
        k = rng.normal(size=(2, 3, 3))
        b = rng.normal(size=2)
        check_grads(lambda xt, kt, bt: T.conv1d(xt, kt, bt, stride=stride, padding=padding),
                    [x, k, b])


class TestPointwise:
    def test_relu(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_allclose(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_mul(self):
        out = T.mul(Tensor([2.0, 3.0]), Tensor([4.0, 5.0]))
        np.testing.assert_allclose(out.data, [8.0, 15.0])

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 6))
        x += np.sign(x) * 0.05  # keep away from kinks
        check_grads(lambda t: T.relu(t), [x.copy()])
        check_grads(lambda t: T.leaky_relu(t, 0.1), [x.copy()])
        check_grads(lambda t: T.sigmoid(t), [x.copy()])
        check_grads(lambda t: T.tanh(t), [x.copy()])
        check_grads(lambda t: T.absolute(t), [x.copy()])
        y = rng.normal(size=(4, 6))
        check_grads(lambda a, b: T.mul(a, b), [x.copy(), y])
        check_grads(lambda a, b: T.add(a, b), [x.copy(), y.copy()])

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 6))
        row = rng.normal(size=(1, 6))
        check_grads(lambda a, b: T.mul(a, b), [x, row])


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0]), axis=0).data, [0.5, 0.5])

    def test_stability(self):
        out = T.softmax(Tensor([1000.0, 0.0]), axis=0).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_closed_form(self):
        out = T.softmax(Tensor([np.log(2.0), 0.0]), axis=0).data
        np.testing.assert_allclose(out, [2.0 / 3.0, 1.0 / 3.0], rtol=1e-14)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 8))
        out = T.softmax(Tensor(x), axis=0).data
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)
        shifted = T.softmax(Tensor(x + 3.7), axis=0).data
        np.testing.assert_allclose(out, shifted, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(5, 4))
        check_grads(lambda t: T.softmax(t, axis=0), [x])
        check_grads(lambda t: T.softmax(t, axis=1), [x.copy()])


class TestInterpGather:
    def test_midpoint(self):
        out = T.interp_gather(Tensor([[10.0, 20.0, 30.0]]), Tensor([0.5]))
        np.testing.assert_allclose(out.data, [[15.0]])

    def test_clamping(self):
        out = T.interp_gather(Tensor([[10.0, 20.0, 30.0]]), Tensor([-0.3, 5.2]))
        np.testing.assert_allclose(out.data, [[10.0, 30.0]])

    def test_integer_positions_exact(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=(3, 7))
        out = T.interp_gather(Tensor(v), Tensor(np.arange(7.0)))
        np.testing.assert_array_equal(out.data, v)

    def test_piecewise_linear(self):
        v = Tensor([[0.0, 1.0, 4.0]])
        for p in [0.25, 0.5, 0.75]:
            out = T.interp_gather(v, Tensor([p]))
            np.testing.assert_allclose(out.data, [[p]])
        for p in [1.25, 1.5]:
            out = T.interp_gather(v, Tensor([p]))
            np.testing.assert_allclose(out.data, [[1.0 + 3.0 * (p - 1.0)]])

    def test_gradients(self):
        rng = np.random.default_rng(10)
        v = rng.normal(size=(3, 9))
        # positions strictly inside integer cells so FD does not straddle kinks
        p = np.arange(7) + rng.uniform(0.2, 0.8, size=7)
        check_grads(lambda vt, pt: T.interp_gather(vt, pt), [v, p])

    def test_position_grad_zero_when_clamped(self):
        v = Tensor(np.arange(12.0).reshape(2, 6), requires_grad=True)
        p = Tensor(np.array([-1.0, 7.0, 2.5]), requires_grad=True)
        out = T.interp_gather(v, p)
        T.tsum(out).backward()
        np.testing.assert_allclose(p.grad[:2], 0.0)
        assert p.grad[2] != 0.0


class TestMatmul:
    def test_identity(self):
        x = np.random.default_rng(11).normal(size=(3, 4))
        out = T.matmul(Tensor(np.eye(3)), Tensor(x))
        np.testing.assert_allclose(out.data, x)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(out.data, [[11.0]])

    def test_zero(self):
        x = np.random.default_rng(12).normal(size=(2, 5))
        out = T.matmul(Tensor(np.zeros((3, 2))), Tensor(x))
        np.testing.assert_allclose(out.data, 0.0)

    def test_inner_mismatch(self):
        with pytest.raises(T.ShapeError, match="inner"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_gradients(self):
        rng = np.random.default_rng(13)
        check_grads(lambda a, b: T.matmul(a, b),
                    [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))])


class TestShapeOps:
    def test_narrow_and_concat_gradients(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(2, 8))
        check_grads(lambda t: T.narrow(t, 1, 2, 4), [x])
        y = rng.normal(size=(3, 8))
        check_grads(lambda a, b: T.concat([a, b], axis=0), [x.copy(), y])

    def test_index_select_gradients(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=6)
        check_grads(lambda t: T.index_select(t, [0, 2, 2, 5, 1]), [x])

    def test_reshape_transpose_gradients(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(3, 4))
        check_grads(lambda t: T.reshape(t, (4, 3)), [x])
        check_grads(lambda t: T.transpose(t), [x.copy()])

    def test_reductions(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(3, 5))
        check_grads(lambda t: T.tsum(t), [x])
        check_grads(lambda t: T.tmean(t), [x.copy()])


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.random.default_rng(18).normal(size=(3, 4)), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.mul(x, x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_non_scalar_backward_raises(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(T.ShapeError, match="scalar"):
            T.mul(x, 2.0).backward()

    def test_fanout_accumulation(self):
        x = Tensor([3.0], requires_grad=True)
        y = T.add(T.mul(x, 2.0), T.mul(x, 5.0))
        T.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_chain_matches_jacobian_product(self):
        # y = sigmoid(a*x + b); dy/dx = sigmoid'(a*x+b) * a
        x = Tensor([0.3], requires_grad=True)
        a, b = 1.7, -0.4
        y = T.sigmoid(T.add(T.mul(x, a), b))
        T.tsum(y).backward()
        s = 1.0 / (1.0 + np.exp(-(a * 0.3 + b)))
        np.testing.assert_allclose(x.grad, [s * (1 - s) * a], rtol=1e-12)

    def test_graph_freed_after_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = T.tsum(T.mul(x, x))
        y.backward()
        assert y._parents == () and y._backward is None

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor([1.0], requires_grad=True)
        T.tsum(T.mul(x, 3.0)).backward()
        T.tsum(T.mul(x, 4.0)).backward()
        np.testing.assert_allclose(x.grad, [7.0])
