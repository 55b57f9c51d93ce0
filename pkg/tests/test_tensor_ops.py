"""Forward semantics, shape contracts and error paths of the tensor kernels."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traitfusion import DataError, DimensionError, ParameterError, Tape, Tensor, UsageError
from traitfusion import tensor as T


class TestMatmul:
    def test_identity(self):
        out = T.matmul([[1.0, 0.0], [0.0, 1.0]], [[3.0, 4.0], [5.0, 6.0]])
        npt.assert_allclose(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_scalar_like(self):
        assert T.matmul([[2.0]], [[3.0]]).item() == 6.0

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_grad_of_sum(self):
        a = T.parameter([[1.0, 2.0]], dtype=np.float64)
        b = Tensor([[3.0], [4.0]], dtype=np.float64)
        with Tape() as tape:
            loss = T.sum_all(T.matmul(a, b))
            tape.backward(loss)
        npt.assert_allclose(tape.grad(a), [[3.0, 4.0]])


class TestActivations:
    def test_relu(self):
        npt.assert_allclose(T.activation([-1.0, 0.0, 2.0], "relu").data, [0.0, 0.0, 2.0])

    def test_sigmoid_center(self):
        assert T.activation([0.0], "sigmoid").data[0] == pytest.approx(0.5)

    def test_sigmoid_no_overflow(self):
        out = T.sigmoid([-1000.0, 1000.0]).data
        assert np.all(np.isfinite(out))
        npt.assert_allclose(out, [0.0, 1.0], atol=1e-12)

    def test_relu_grad_piecewise(self):
        x = T.parameter([-1.0, 2.0], dtype=np.float64)
        with Tape() as tape:
            tape.backward(T.sum_all(T.relu(x)))
        npt.assert_allclose(tape.grad(x), [0.0, 1.0])

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            T.activation([0.0], "gelu")


class TestSoftmax:
    def test_symmetry(self):
        npt.assert_allclose(T.softmax([0.0, 0.0]).data, [0.5, 0.5])

    def test_shift_invariance_no_overflow(self):
        out = T.softmax([1000.0, 1000.0]).data
        assert np.all(np.isfinite(out))
        npt.assert_allclose(out, [0.5, 0.5])

    def test_closed_form(self):
        out = T.softmax([np.log(2.0), 0.0]).data
        npt.assert_allclose(out, [2.0 / 3.0, 1.0 / 3.0], rtol=1e-6)

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            T.softmax(np.zeros((2, 2)), axis=5)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
           st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one_and_shift_invariant(self, row, shift):
        x = np.asarray(row, dtype=np.float64)
        out = T.softmax(x).data
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) < 1e-6
        shifted = T.softmax(x + shift).data
        npt.assert_allclose(out, shifted, atol=1e-9)


class TestPoolMax:
    def test_1d(self):
        npt.assert_allclose(T.pool_max([1.0, 3.0, 2.0, 4.0], (2,), (2,)).data, [3.0, 4.0])

    def test_constant_input(self):
        out = T.pool_max(np.full((4, 6), 2.5), (2, 2), (2, 2))
        assert out.shape == (2, 3)
        npt.assert_allclose(out.data, 2.5)

    def test_trailing_dim_pooling_shape(self):
        x = np.random.default_rng(0).normal(size=(64, 8, 14, 14)).astype(np.float32)
        out = T.pool_max(x, (1, 2, 2), (1, 2, 2))
        assert out.shape == (64, 8, 7, 7)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            T.pool_max(np.zeros(3), (4,), (1,))

    @given(st.integers(1, 12), st.integers(1, 4), st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_output_extent_floor_formula(self, n, k, s):
        if k > n:
            return
        out = T.pool_max(np.zeros(n), (k,), (s,))
        assert out.shape == ((n - k) // s + 1,)


class TestConvolve:
    def test_one_by_one_identity(self):
        x = np.arange(12, dtype=np.float32).reshape(1, 3, 4)
        out = T.convolve(x, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32),
                         spatial_rank=2)
        npt.assert_allclose(out.data, x)

    def test_sixteen_kernels_size_one(self):
        x = np.random.default_rng(1).normal(size=(64, 8, 14, 14)).astype(np.float32)
        k = np.random.default_rng(2).normal(size=(16, 64, 1, 1, 1)).astype(np.float32)
        out = T.convolve(x, k, np.zeros(16, np.float32), spatial_rank=3)
        assert out.shape == (16, 8, 14, 14)

    def test_2d_kernel_two_reduces_extent(self):
        x = np.zeros((3, 7, 7), np.float32)
        k = np.zeros((5, 3, 2, 2), np.float32)
        out = T.convolve(x, k, np.zeros(5, np.float32), spatial_rank=2)
        assert out.shape == (5, 6, 6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="channel"):
            T.convolve(np.zeros((3, 4, 4)), np.zeros((2, 5, 1, 1)), np.zeros(2),
                       spatial_rank=2)

    def test_against_direct_sum(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 6))
        k = rng.normal(size=(3, 2, 2, 3))
        b = rng.normal(size=3)
        out = T.convolve(x, k, b, spatial_rank=2).data
        expect = np.zeros((3, 4, 4))
        for co in range(3):
            for i in range(4):
                for j in range(4):
                    expect[co, i, j] = (x[:, i:i + 2, j:j + 3] * k[co]).sum() + b[co]
        npt.assert_allclose(out, expect, rtol=1e-12)


class TestLinear:
    def test_identity(self):
        x = np.array([[1.0, 2.0]], np.float32)
        out = T.linear(x, np.eye(2, dtype=np.float32), np.zeros(2, np.float32))
        npt.assert_allclose(out.data, x)

    def test_small_example(self):
        out = T.linear([1.0, 1.0], [[1.0], [1.0]], [0.5])
        npt.assert_allclose(out.data, [2.5])

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            T.linear(np.zeros((1, 3)), np.zeros((2, 4)), np.zeros(4))


class TestDropout:
    def test_inference_is_bit_exact_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(5, 5)))
        out = T.dropout(x, 0.5, training=False)
        assert out is x

    def test_p_zero_identity(self):
        x = Tensor(np.ones(4))
        assert T.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x

    def test_bad_p(self):
        with pytest.raises(ParameterError):
            T.dropout(np.ones(3), 1.0, training=True, rng=np.random.default_rng(0))
        with pytest.raises(ParameterError):
            T.dropout(np.ones(3), -0.1, training=True, rng=np.random.default_rng(0))

    def test_monte_carlo_expectation(self):
        rng = np.random.default_rng(42)
        x = Tensor(np.ones(100_000))
        out = T.dropout(x, 0.3, training=True, rng=rng)
        assert abs(out.data.mean() - 1.0) < 0.01


class TestConcat:
    def test_basic(self):
        npt.assert_allclose(T.concat([[1.0], [2.0]], axis=0).data, [1.0, 2.0])

    def test_extent_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat([np.zeros((2, 3)), np.zeros((2, 4))], axis=0)

    def test_broadcast_concat_channel_growth(self):
        x = np.zeros((64, 8, 7, 7), np.float32)
        v = np.arange(13, dtype=np.float32)
        out = T.broadcast_concat(x, v, axis=0)
        assert out.shape == (77, 8, 7, 7)
        # every spatial position carries the same appended vector
        npt.assert_allclose(out.data[64:, 3, 2, 5], v)
        npt.assert_allclose(out.data[64:, 0, 0, 0], v)

    def test_broadcast_concat_empty_vector_identity(self):
        x = Tensor(np.ones((3, 4)))
        assert T.broadcast_concat(x, np.zeros(0), axis=0) is x

    def test_broadcast_concat_rank_check(self):
        with pytest.raises(DimensionError):
            T.broadcast_concat(np.zeros((3, 4)), np.zeros((2, 2)), axis=0)


class TestMse:
    def test_zero_on_equal(self):
        assert T.mse([1.0, 2.0], [1.0, 2.0]).item() == 0.0

    def test_half(self):
        assert T.mse([1.0, 0.0], [0.0, 0.0]).item() == pytest.approx(0.5)

    def test_hand_arithmetic(self):
        assert T.mse([0.6, 0.4], [0.5, 0.5]).item() == pytest.approx(0.01)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.mse(np.zeros(3), np.zeros(4))


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.parameter(np.random.default_rng(0).normal(size=(3, 4)), dtype=np.float64)
        with Tape() as tape:
            tape.backward(T.sum_all(x))
        npt.assert_allclose(tape.grad(x), np.ones((3, 4)))

    def test_mse_hand_calculus(self):
        x = T.parameter([2.0], dtype=np.float64)
        with Tape() as tape:
            tape.backward(T.mse(x, [0.0]))
        npt.assert_allclose(tape.grad(x), [4.0])

    def test_disjoint_branches_sum(self):
        a = T.parameter([1.0, 2.0], dtype=np.float64)
        b = T.parameter([3.0], dtype=np.float64)
        with Tape() as tape:
            loss = T.add(T.sum_all(T.mul(a, a)), T.sum_all(T.scale(b, 3.0)))
            tape.backward(loss)
        npt.assert_allclose(tape.grad(a), [2.0, 4.0])
        npt.assert_allclose(tape.grad(b), [3.0])

    def test_untouched_tensor_gets_zero_grad(self):
        x = T.parameter([1.0], dtype=np.float64)
        unused = T.parameter([5.0], dtype=np.float64)
        with Tape() as tape:
            tape.backward(T.sum_all(x))
        npt.assert_allclose(tape.grad(unused), [0.0])

    def test_non_scalar_loss_rejected(self):
        x = T.parameter([1.0, 2.0])
        with Tape() as tape:
            y = T.relu(x)
            with pytest.raises(UsageError):
                tape.backward(y)

    def test_tape_locked_after_backward(self):
        x = T.parameter([1.0])
        with Tape() as tape:
            tape.backward(T.sum_all(x))
            with pytest.raises(UsageError):
                T.relu(x)

    def test_node_order_is_topological(self):
        x = T.parameter([1.0])
        with Tape() as tape:
            y = T.relu(x)
            z = T.sum_all(y)
            for node_id, node in enumerate(tape.nodes):
                assert all(i < node_id for i in node.inputs if i is not None)
            tape.backward(z)


class TestFiniteness:
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=16))
    @settings(max_examples=40, deadline=None)
    def test_forward_ops_stay_finite(self, vals):
        x = np.asarray(vals, dtype=np.float64)
        for out in (T.relu(x), T.sigmoid(x), T.tanh(x), T.softmax(x),
                    T.scale(x, 2.0), T.mse(x, np.zeros_like(x))):
            assert np.all(np.isfinite(out.data))


class TestMprtFormat:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip(self, tmp_path, dtype):
        arr = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(dtype)
        path = tmp_path / "t.mprt"
        T.save_tensor(path, arr)
        back = T.load_tensor(path)
        assert back.dtype == dtype
        npt.assert_array_equal(back, arr)

    def test_scalar_rank_zero(self, tmp_path):
        path = tmp_path / "s.mprt"
        T.save_tensor(path, np.asarray(3.25, dtype=np.float32))
        back = T.load_tensor(path)
        assert back.shape == ()
        assert back == np.float32(3.25)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "h.mprt"
        T.save_tensor(path, np.zeros((2, 3), np.float64))
        raw = path.read_bytes()
        assert raw[:4] == b"MPRT"
        assert raw[4] == 1          # version
        assert raw[5] == 1          # f64
        assert raw[6] == 2          # rank
        assert raw[7:15] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mprt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(DataError, match="magic"):
            T.load_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.mprt"
        T.save_tensor(path, np.zeros(8, np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DataError):
            T.load_tensor(path)
