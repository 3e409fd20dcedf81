import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from c3rl import tensor as T
from c3rl.errors import AxisError, ContractError, DimensionError, RankError
from c3rl.tensor import Tensor, backward

from gradcheck import TOL, check_function, numeric_grad, rel_err


@pytest.fixture(autouse=True)
def fresh_tape():
    T.reset_tape()
    yield
    T.reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, np.eye(2)).data, a)

    def test_zero(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, np.zeros((2, 2))).data, np.zeros((2, 2)))

    def test_hand_oracle(self):
        out = T.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
        # 1*5 + 2*6, 3*5 + 4*6
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_inner_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rank_one_rejected(self):
        with pytest.raises(DimensionError):
            T.matmul(np.ones(3), np.ones((3, 2)))

    def test_batched_broadcast_gradient(self, rng):
        a = rng.uniform(-2, 2, (2, 3, 4))
        b = rng.uniform(-2, 2, (4, 5))
        assert check_function(T.matmul, [a, b], rng) < TOL


class TestLayout:
    def test_transpose_definition(self):
        out = T.transpose_last_two([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        np.testing.assert_array_equal(out.data, [[1, 4], [2, 5], [3, 6]])

    def test_transpose_shape_law(self):
        assert T.transpose_last_two(np.zeros((2, 3, 4))).shape == (2, 4, 3)

    def test_transpose_rank_error(self):
        with pytest.raises(RankError):
            T.transpose_last_two(np.zeros(3))

    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=4, max_side=4),
                      elements=st.floats(-1e6, 1e6)))
    def test_transpose_involution(self, x):
        np.testing.assert_array_equal(T.transpose_last_two(T.transpose_last_two(x)).data, x)

    def test_permute_invalid(self):
        with pytest.raises(AxisError):
            T.permute(np.zeros((2, 3)), (0, 0))

    def test_reshape_invalid(self):
        with pytest.raises(DimensionError):
            T.reshape(np.zeros((2, 3)), (4, 2))

    def test_take_patches(self):
        series = np.arange(8.0)[None, :]
        idx = np.array([[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7]])
        np.testing.assert_array_equal(T.take(series, idx, axis=1).data[0], idx.astype(float))

    def test_take_bad_axis(self):
        with pytest.raises(AxisError):
            T.take(np.zeros((2, 3)), [0], axis=2)

    def test_take_overlap_accumulates(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        backward(T.take(x, np.array([[0, 1], [1, 2]]), axis=0).sum())
        np.testing.assert_array_equal(x.grad, [1.0, 2.0, 1.0, 0.0])


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(T.add([1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])

    def test_mul_zero(self, rng):
        np.testing.assert_array_equal(T.mul(rng.normal(size=5), 0.0).data, np.zeros(5))

    def test_sub(self):
        np.testing.assert_array_equal(T.sub([5.0, 5.0], [2.0, 3.0]).data, [3.0, 2.0])

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            T.add(np.ones((2, 3)), np.ones((4,)))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            T.elementwise("pow", 1.0, 2.0)

    def test_broadcast_gradient_reduces_to_operand_shape(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones((1, 4)), requires_grad=True)
        backward((a * b).sum())
        assert b.grad.shape == (1, 4)
        np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(-10, 10)),
           hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(-10, 10)))
    def test_add_commutes(self, a, b):
        if a.shape != b.shape:
            b = np.resize(b, a.shape)
        np.testing.assert_array_equal(T.add(a, b).data, T.add(b, a).data)


class TestReduce:
    def test_mean(self):
        assert T.reduce("mean", [1.0, 2.0, 3.0]).item() == 2.0

    def test_sum_axis0(self):
        np.testing.assert_array_equal(T.reduce("sum", [[1.0, 2.0], [3.0, 4.0]], axis=0).data, [4.0, 6.0])

    @given(st.floats(-1e3, 1e3), st.integers(1, 20))
    def test_mean_of_constant(self, c, n):
        assert T.reduce("mean", np.full(n, c)).item() == pytest.approx(c, rel=1e-12, abs=1e-12)

    def test_axis_out_of_range(self):
        with pytest.raises(AxisError):
            T.reduce("sum", np.zeros((2, 2)), axis=2)


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(T.activation("relu", [-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])

    def test_softmax_symmetric(self):
        np.testing.assert_allclose(T.softmax_last([0.0, 0.0]).data, [0.5, 0.5], rtol=0, atol=1e-15)

    def test_softmax_closed_form(self):
        np.testing.assert_allclose(T.softmax_last([np.log(2.0), 0.0]).data, [2 / 3, 1 / 3], rtol=1e-14)

    def test_softmax_large_logits_stay_finite(self):
        out = T.softmax_last([1000.0, 0.0, -1000.0]).data
        assert np.all(np.isfinite(out))
        assert out.sum() == pytest.approx(1.0)

    def test_gelu_fixed_points(self):
        out = T.gelu_approx([0.0, 10.0, -10.0]).data
        assert out[0] == 0.0
        assert out[1] == pytest.approx(10.0)
        assert out[2] == pytest.approx(0.0, abs=1e-12)

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            T.activation("swish", [1.0])


class TestNormalize:
    def test_345(self):
        np.testing.assert_allclose(T.l2_normalize_last([3.0, 4.0]).data, [0.6, 0.8], rtol=1e-15)

    def test_zero_vector(self):
        out = T.l2_normalize_last([0.0, 0.0]).data
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_norm_three(self):
        np.testing.assert_allclose(T.l2_normalize_last([1.0, 2.0, 2.0]).data, [1 / 3, 2 / 3, 2 / 3], rtol=1e-15)

    def test_zero_vector_gradient_finite(self):
        x = Tensor(np.zeros((1, 3)), requires_grad=True)
        backward(T.l2_normalize_last(x).sum())
        assert np.all(np.isfinite(x.grad))

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
                      elements=st.floats(-1e3, 1e3)))
    def test_rows_unit_or_zero(self, x):
        out = T.l2_normalize_last(x).data
        norms = np.linalg.norm(out, axis=-1)
        small = np.linalg.norm(x, axis=-1) <= T.NORM_EPS
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(norms[~small], 1.0, rtol=1e-12)


class TestDetach:
    def test_same_values(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        np.testing.assert_array_equal(T.detach(x).data, x.data)

    def test_blocks_gradient(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        w = Tensor(rng.normal(size=4), requires_grad=True)
        backward((T.detach(x) * w).sum())
        assert x.grad is None or not np.any(x.grad)
        np.testing.assert_array_equal(w.grad, x.data)

    def test_one_branch_cut(self, rng):
        data = rng.normal(size=5)
        x = Tensor(data.copy(), requires_grad=True)
        backward((x * T.detach(x)).sum())
        np.testing.assert_array_equal(x.grad, data)
        # on the cut graph, the detached factor is a constant c = data
        c = data.copy()
        probe = data.copy()
        num = numeric_grad(lambda: float((probe * c).sum()), probe)
        assert rel_err(x.grad, num).max() < TOL


class TestBackward:
    def test_square(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward((x * x).sum())
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_constant_loss_gives_no_grads(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(Tensor(3.0))
        assert x.grad is None

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_cleared_tape_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        with pytest.raises(ContractError):
            backward(loss)

    def test_retain_graph_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        backward(loss, retain_graph=True)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_random_chain_matches_fd(self, rng):
        def chain(a, b):
            return T.gelu_approx(T.matmul(a, b)) * T.sqrt(b.sum() * b.sum() + 1.0)

        a = rng.uniform(-2, 2, (3, 4))
        b = rng.uniform(-2, 2, (4, 2))
        assert check_function(chain, [a, b], rng) < TOL

    def test_diamond_graph(self):
        # y = x*x + x*x reuses the same intermediate twice
        x = Tensor([3.0], requires_grad=True)
        sq = x * x
        backward((sq + sq).sum())
        np.testing.assert_array_equal(x.grad, [12.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * x
            assert not T.is_grad_enabled()
        assert y.node is None
        assert len(T.get_tape()) == 0
        assert T.is_grad_enabled()

    def test_tape_is_thread_local(self):
        x = Tensor([1.0], requires_grad=True)
        _ = x * x
        seen = []
        t = threading.Thread(target=lambda: seen.append(len(T.get_tape())))
        t.start()
        t.join()
        assert seen == [0]
        assert len(T.get_tape()) == 1

    def test_operator_overloads(self):
        x = Tensor([2.0], requires_grad=True)
        backward((1.0 - x / 4.0 + 3.0 * x - (-x)).sum())
        np.testing.assert_allclose(x.grad, [-0.25 + 3.0 + 1.0])
