import numpy as np
import pytest

from wavefm import tensor as T
from wavefm.tensor import Tensor


def test_matmul_identity():
    a = np.arange(9, dtype=np.float64).reshape(3, 3)
    out = T.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_softmax_symmetry():
    out = T.softmax(Tensor(np.zeros((1, 3))))
    np.testing.assert_allclose(out.data, np.full((1, 3), 1.0 / 3.0))


def test_gelu_zero_fixed_point():
    assert T.gelu(Tensor(np.zeros(1))).data[0] == 0.0


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4.0), requires_grad=True)
    T.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_backward_square_at_three():
    x = Tensor(np.array([3.0]), requires_grad=True)
    T.sum_(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [6.0])


def test_shared_tensor_accumulates_both_paths():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, Tensor(np.array([3.0]))))  # x^2 + 3x
    T.sum_(y).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_repeated_backward_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = T.sum_(x)
    loss.backward()
    first = x.grad.copy()
    loss.grad = None
    loss.backward()
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        T.mul(x, x).backward()


def test_nan_rejected_at_boundary():
    with pytest.raises(ValueError, match="non-finite"):
        Tensor(np.array([1.0, np.nan]))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(T.ShapeError, match="matmul"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_concat_and_slice_roundtrip():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.arange(3.0).reshape(1, 3), requires_grad=True)
    joined = T.concat([a, b], axis=0)
    back = joined[0:2, :]
    T.sum_(back).backward()
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    assert not b.grad.any()  # on the graph, but excluded by the slice


def test_gather_repeats_accumulate():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    out = T.gather(a, np.array([1, 1, 0]), axis=0)
    T.sum_(out).backward()
    np.testing.assert_array_equal(a.grad, [[1, 1], [2, 2], [0, 0]])


def test_wrap_phase_values():
    delta = Tensor(np.array([(np.pi - 0.1) - (-np.pi + 0.1), 0.3, -np.pi]))
    wrapped = T.wrap_phase(delta).data
    np.testing.assert_allclose(np.abs(wrapped), [0.2, 0.3, np.pi], atol=1e-12)


def test_batched_matmul_matches_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal((4, 5, 2))
    out = T.matmul(Tensor(a), Tensor(b)).data
    for i in range(4):
        np.testing.assert_allclose(out[i], a[i] @ b[i], rtol=1e-12)


@pytest.mark.parametrize("op", T.GRAD_CHECK_OPS)
def test_grad_check_quick(op):
    # two seeds here; the acceptance suite sweeps ten
    for seed in (0, 1):
        assert T.grad_check(op, seed) < 1e-5


def test_composed_chain_matches_finite_differences():
    rng = np.random.default_rng(3)

    def chain(x, w):
        h = T.gelu(T.matmul(x, w))
        return T.sqrt(T.add(T.mean(T.mul(h, h)), Tensor(np.array(0.5))))

    inputs = [
        Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64),
        Tensor(rng.standard_normal((4, 2)), requires_grad=True, dtype=np.float64),
    ]
    assert T.finite_difference_check(inputs, chain) < 1e-5


def test_detach_stops_gradient():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = T.mul(x.detach(), x)
    T.sum_(y).backward()
    np.testing.assert_allclose(x.grad, [2.0])
