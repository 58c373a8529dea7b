"""Forward semantics of the tensor kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcvos import tensor as T
from tcvos.errors import ContractError, DimensionError
from tcvos.rng import Rng
from tcvos.tensor import Tensor


def t64(data):
    return Tensor(np.asarray(data, dtype=np.float64))


class TestMatmul:
    def test_identity(self):
        a = t64([[1, 2], [3, 4]])
        out = T.matmul(a, t64(np.eye(2)))
        assert np.array_equal(out.data, a.data)

    def test_annihilator(self):
        a = t64([[1, 2], [3, 4]])
        assert np.array_equal(T.matmul(a, t64(np.zeros((2, 2)))).data, np.zeros((2, 2)))

    def test_inner_product(self):
        out = T.matmul(t64([[1, 2]]), t64([[1], [1]]))
        assert out.data.tolist() == [[3]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"2.*3"):
            T.matmul(t64(np.ones((2, 2))), t64(np.ones((3, 2))))

    def test_batched(self):
        rng = Rng(0)
        a = rng.normal((2, 3, 4), dtype=np.float64)
        b = rng.normal((4, 5), dtype=np.float64)
        out = T.matmul(Tensor(a), Tensor(b))
        assert np.allclose(out.data, a @ b)


class TestConv2d:
    def test_1x1_identity_weight(self):
        x = Tensor(Rng(1).normal((2, 3, 5, 5), dtype=np.float64))
        w = np.zeros((3, 3, 1, 1))
        for i in range(3):
            w[i, i, 0, 0] = 1.0
        out = T.conv2d(x, t64(w))
        assert np.array_equal(out.data, x.data)

    def test_all_ones_sum(self):
        out = T.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))))
        assert out.data.reshape(-1).tolist() == [9.0]

    def test_stride_2_subsample(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = T.conv2d(Tensor(x), t64(np.ones((1, 1, 1, 1))), stride=2)
        assert out.data.tolist() == [[[[0, 2], [8, 10]]]]

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(t64(np.ones((1, 3, 4, 4))), t64(np.ones((2, 4, 3, 3))), padding=1)

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            T.conv2d(t64(np.ones((1, 1, 4, 4))), t64(np.ones((1, 1, 2, 2))))

    def test_depthwise_matches_dense_loop(self):
        rng = Rng(2)
        x = rng.normal((2, 4, 6, 6), dtype=np.float64)
        w = rng.normal((4, 1, 3, 3), dtype=np.float64)
        out = T.conv2d(Tensor(x), Tensor(w), padding=1, groups=4)
        for c in range(4):
            ref = T.conv2d(Tensor(x[:, c:c + 1]), Tensor(w[c:c + 1]), padding=1)
            assert np.allclose(out.data[:, c], ref.data[:, 0], atol=1e-12)

    def test_padding_shape(self):
        out = T.conv2d(t64(np.ones((1, 2, 8, 8))), t64(np.ones((5, 2, 3, 3))),
                       stride=2, padding=1)
        assert out.shape == (1, 5, 4, 4)


class TestResize:
    def test_constant_exact(self):
        x = Tensor(np.full((1, 2, 3, 5), 7.0))
        out = T.resize_bilinear(x, 9, 11)
        assert np.array_equal(out.data, np.full((1, 2, 9, 11), 7.0))

    def test_1x1_replicates(self):
        out = T.resize_bilinear(t64(np.full((1, 1, 1, 1), 3.5)), 4, 4)
        assert np.array_equal(out.data, np.full((1, 1, 4, 4), 3.5))

    def test_hand_weights_1x2_to_1x4(self):
        out = T.resize_bilinear(t64(np.array([[[[1.0, 3.0]]]])), 1, 4)
        assert np.allclose(out.data.reshape(-1), [1.0, 1.5, 2.5, 3.0], atol=1e-15)

    def test_invalid_target(self):
        with pytest.raises(DimensionError):
            T.resize_bilinear(t64(np.ones((1, 1, 2, 2))), 0, 4)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(t64(np.zeros(7)))
        assert np.allclose(out.data, 1 / 7, atol=1e-15)

    def test_closed_form(self):
        out = T.softmax(t64([0.0, np.log(3.0)]))
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-15)

    def test_rows_sum_to_one(self):
        x = Rng(3).normal((4, 9), std=20.0, dtype=np.float64)
        out = T.softmax(Tensor(x), axis=1)
        assert np.all(out.data > 0)
        assert np.abs(out.data.sum(axis=1) - 1).max() < 1e-12

    @given(st.floats(-50, 50))
    @settings(max_examples=25, deadline=None)
    def test_shift_invariance(self, c):
        x = Rng(4).normal((6,), dtype=np.float64)
        a = T.softmax(Tensor(x)).data
        b = T.softmax(Tensor(x + c)).data
        assert np.abs(a - b).max() < 1e-12


class TestLayernorm:
    def test_constant_token_zeros(self):
        x = Tensor(np.full((3, 4), 2.5))
        out = T.layernorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-6)
        assert np.abs(out.data).max() < 1e-3

    def test_already_normalized(self):
        out = T.layernorm(t64([1.0, -1.0]), t64(np.ones(2)), t64(np.zeros(2)), eps=1e-14)
        assert np.allclose(out.data, [1.0, -1.0], atol=1e-10)

    def test_gamma_zero_gives_beta(self):
        x = Tensor(Rng(5).normal((2, 6), dtype=np.float64))
        beta = Rng(6).normal((6,), dtype=np.float64)
        out = T.layernorm(x, Tensor(np.zeros(6)), Tensor(beta), eps=1e-6)
        assert np.allclose(out.data, np.broadcast_to(beta, (2, 6)), atol=1e-15)

    def test_zero_mean_unit_variance(self):
        x = Tensor(Rng(7).normal((5, 16), std=3.0, dtype=np.float64))
        out = T.layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-14)
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-10
        assert np.abs(out.data.var(axis=-1) - 1).max() < 1e-10


class TestElementwise:
    def test_relu(self):
        out = T.relu(t64([-3.0, 3.0]))
        assert out.data.tolist() == [0.0, 3.0]

    def test_sigmoid_zero(self):
        assert T.sigmoid(t64([0.0])).data.tolist() == [0.5]

    def test_broadcast_add(self):
        out = T.add(t64([1.0, 2.0]), t64([10.0]))
        assert out.data.tolist() == [11.0, 12.0]

    def test_incompatible_broadcast(self):
        with pytest.raises(DimensionError):
            T.add(t64(np.ones(3)), t64(np.ones(4)))

    def test_scalar_operands(self):
        x = t64([1.0, 2.0])
        assert (1.0 - x).data.tolist() == [0.0, -1.0]
        assert (x * 2.0).data.tolist() == [2.0, 4.0]
        assert (x ** 2).data.tolist() == [1.0, 4.0]

    def test_softplus_stable(self):
        out = T.softplus(t64([-1000.0, 0.0, 1000.0]))
        assert np.isfinite(out.data).all()
        assert abs(out.data[1] - np.log(2)) < 1e-15
        assert abs(out.data[2] - 1000.0) < 1e-12

    def test_gelu_values(self):
        # gelu(0)=0 and large positives pass through
        out = T.gelu(t64([0.0, 10.0]))
        assert out.data[0] == 0.0
        assert abs(out.data[1] - 10.0) < 1e-12

    def test_mixed_precision_rejected(self):
        with pytest.raises(ContractError):
            T.add(Tensor(np.ones(2, dtype=np.float32)), t64(np.ones(2)))


class TestReduce:
    def test_sum(self):
        assert T.reduce_sum(t64([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean_constant(self):
        assert T.reduce_mean(Tensor(np.full((3, 4), 2.5))).data == pytest.approx(2.5)

    def test_max_axis0(self):
        out = T.reduce_max(t64([[1.0, 5.0], [4.0, 2.0]]), axis=0)
        assert out.data.tolist() == [4.0, 5.0]

    def test_mean_times_count_equals_sum(self):
        x = Rng(8).normal((6, 7), dtype=np.float64)
        s = T.reduce_sum(Tensor(x), axis=1).data
        m = T.reduce_mean(Tensor(x), axis=1).data
        assert np.abs(m * 7 - s).max() < 1e-12


class TestConcatCosine:
    def test_concat_counts(self):
        a = t64(np.ones((1, 2, 3, 3)))
        b = t64(np.zeros((1, 3, 3, 3)))
        assert T.concat_channels(a, b).shape == (1, 5, 3, 3)

    def test_concat_roundtrip(self):
        rng = Rng(9)
        a = Tensor(rng.normal((2, 3, 4, 4), dtype=np.float64))
        b = Tensor(rng.normal((2, 2, 4, 4), dtype=np.float64))
        cat = T.concat_channels(a, b)
        assert np.array_equal(T.slice_channels(cat, 0, 3).data, a.data)
        assert np.array_equal(T.slice_channels(cat, 3, 5).data, b.data)

    def test_concat_empty(self):
        a = t64(np.ones((1, 2, 3, 3)))
        none = t64(np.zeros((1, 0, 3, 3)))
        assert np.array_equal(T.concat_channels(a, none).data, a.data)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat_channels(t64(np.ones((1, 1, 2, 2))), t64(np.ones((1, 1, 3, 3))))

    def test_cosine_identical(self):
        a = Tensor(Rng(10).normal((1, 4, 3, 3), dtype=np.float64))
        out = T.cosine_channel(a, a)
        assert np.abs(out.data - 1).max() < 1e-5

    def test_cosine_orthogonal(self):
        a = t64(np.stack([np.ones((2, 2)), np.zeros((2, 2))])[None])
        b = t64(np.stack([np.zeros((2, 2)), np.ones((2, 2))])[None])
        assert np.abs(T.cosine_channel(a, b).data).max() == 0.0

    def test_cosine_hand_value(self):
        a = t64(np.stack([np.ones((1, 1)), np.ones((1, 1))])[None])
        b = t64(np.stack([np.ones((1, 1)), np.zeros((1, 1))])[None])
        out = T.cosine_channel(a, b, eps=1e-12)
        assert abs(out.data.reshape(-1)[0] - 1 / np.sqrt(2)) < 1e-9

    def test_cosine_zero_vector_guarded(self):
        a = t64(np.zeros((1, 3, 2, 2)))
        b = t64(np.ones((1, 3, 2, 2)))
        out = T.cosine_channel(a, b)
        assert np.array_equal(out.data, np.zeros((1, 1, 2, 2)))

    def test_cosine_range(self):
        rng = Rng(11)
        a = Tensor(rng.normal((2, 5, 4, 4), dtype=np.float64))
        b = Tensor(rng.normal((2, 5, 4, 4), dtype=np.float64))
        out = T.cosine_channel(a, b).data
        assert out.min() >= -1.0 - 1e-12 and out.max() <= 1.0 + 1e-12


class TestFiniteness:
    def test_ops_stay_finite(self):
        rng = Rng(12)
        x = Tensor(rng.normal((2, 3, 8, 8), std=5.0, dtype=np.float64))
        for out in (T.relu(x), T.gelu(x), T.sigmoid(x), T.softplus(x),
                    T.softmax(x, axis=1), T.resize_bilinear(x, 5, 13)):
            assert np.isfinite(out.data).all()
