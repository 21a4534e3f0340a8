"""Forward-value tests for the tensor primitives against independent oracles."""

import numpy as np
import pytest

from rrnet.tensor import (
    Tensor,
    activation,
    channel_avg,
    channel_max,
    clip,
    concat,
    conv2d,
    global_vertex_avg,
    matmul,
    pool,
    relu,
    reshape,
    sigmoid,
    softmax,
    take_rows,
    tensor_primitive,
    transpose,
    upsample2x,
)


def _loop_conv(x, w, b=None, stride=1):
    """Naive direct convolution, quadruple loop, zero same-padding."""
    h, wd, cin = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    h_out = -(-h // stride)
    w_out = -(-wd // stride)
    pad_h = max((h_out - 1) * stride + k - h, 0)
    pad_w = max((w_out - 1) * stride + k - wd, 0)
    pt, pl = pad_h // 2, pad_w // 2
    out = np.zeros((h_out, w_out, cout), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for co in range(cout):
                acc = 0.0
                for di in range(k):
                    for dj in range(k):
                        si = i * stride + di - pt
                        sj = j * stride + dj - pl
                        if 0 <= si < h and 0 <= sj < wd:
                            for ci in range(cin):
                                acc += x[si, sj, ci] * w[di, dj, ci, co]
                out[i, j, co] = acc + (b[co] if b is not None else 0.0)
    return out


class TestPrimitives:
    def test_matmul_identity(self):
        out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[3.0], [4.0]])

    def test_concat_descriptor_shape(self, rng):
        avg = Tensor(rng.uniform(size=(5, 6, 1)))
        mx = Tensor(rng.uniform(size=(5, 6, 1)))
        assert concat([avg, mx], axis=2).shape == (5, 6, 2)

    def test_add_matches_scalar_loop(self, rng):
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))
        out = (Tensor(a, dtype=np.float64) + Tensor(b, dtype=np.float64)).data
        for i in range(3):
            for j in range(3):
                assert out[i, j] == a[i, j] + b[i, j]

    def test_add_shape_mismatch_names_dims(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros(4))

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_unknown_primitive_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown primitive kind"):
            tensor_primitive("bogus", Tensor(np.zeros(2)))

    def test_primitive_dispatch(self, rng):
        a = Tensor(rng.standard_normal((2, 3)))
        b = Tensor(rng.standard_normal((2, 3)))
        assert np.array_equal(tensor_primitive("add", a, b).data, a.data + b.data)
        assert np.array_equal(tensor_primitive("mul", a, b).data, a.data * b.data)
        assert tensor_primitive("reshape", a, shape=(3, 2)).shape == (3, 2)
        assert tensor_primitive("transpose", a).shape == (3, 2)
        assert np.array_equal(
            tensor_primitive("scalar_op", a, op="mul", value=2.0).data, a.data * 2.0
        )
        assert tensor_primitive("concat", a, b, axis=0).shape == (4, 3)

    def test_transpose_reshape_roundtrip(self, rng):
        a = rng.standard_normal((4, 5))
        t = Tensor(a)
        assert np.array_equal(transpose(transpose(t)).data, a)
        assert np.array_equal(reshape(reshape(t, (20,)), (4, 5)).data, a)

    def test_take_rows_gathers(self, rng):
        a = rng.standard_normal((5, 3))
        idx = np.array([4, 0, 2, 1, 3])
        assert np.array_equal(take_rows(Tensor(a), idx).data, a[idx])


class TestConv2d:
    def test_center_tap_isolated(self):
        x = Tensor(np.full((1, 1, 1), 2.5))
        w = np.arange(9, dtype=np.float32).reshape(3, 3, 1, 1)
        out = conv2d(x, Tensor(w), Tensor(np.zeros(1)))
        # zero padding leaves only the center tap (weight 4) in play
        assert out.data[0, 0, 0] == np.float32(4.0 * 2.5)

    def test_all_ones_tap_counts(self):
        x = Tensor(np.ones((5, 5, 1)))
        w = Tensor(np.ones((3, 3, 1, 1)))
        out = conv2d(x, w, Tensor(np.zeros(1))).data[:, :, 0]
        assert out[2, 2] == 9.0
        assert out[0, 0] == 4.0
        assert out[0, 2] == 6.0

    def test_random_matches_loop_oracle(self, rng):
        x = rng.standard_normal((7, 7, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        b = rng.standard_normal(3)
        got = conv2d(
            Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64)
        ).data
        assert np.abs(got - _loop_conv(x, w, b)).max() < 1e-12

    @pytest.mark.parametrize("k", [1, 5, 7])
    def test_other_kernel_sizes_match_oracle(self, rng, k):
        x = rng.standard_normal((8, 6, 2))
        w = rng.standard_normal((k, k, 2, 2))
        got = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64)).data
        assert np.abs(got - _loop_conv(x, w)).max() < 1e-12

    def test_stride2_matches_loop_oracle(self, rng):
        x = rng.standard_normal((8, 8, 3))
        w = rng.standard_normal((3, 3, 3, 4))
        got = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), stride=2).data
        assert got.shape == (4, 4, 4)
        assert np.abs(got - _loop_conv(x, w, stride=2)).max() < 1e-12

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            conv2d(Tensor(np.zeros((4, 4, 1))), Tensor(np.zeros((2, 2, 1, 1))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))

    def test_linearity(self, rng):
        x = rng.standard_normal((6, 6, 2))
        y = rng.standard_normal((6, 6, 2))
        w = Tensor(rng.standard_normal((3, 3, 2, 2)), dtype=np.float64)
        alpha, beta = 1.7, -0.45
        lhs = conv2d(Tensor(alpha * x + beta * y, dtype=np.float64), w).data
        rhs = alpha * conv2d(Tensor(x, dtype=np.float64), w).data + beta * conv2d(
            Tensor(y, dtype=np.float64), w
        ).data
        assert np.abs(lhs - rhs).max() < 1e-10


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_relu_negative_clamp(self):
        assert relu(Tensor([-2.5])).data[0] == 0.0

    def test_sigmoid_strictly_inside_unit_interval(self):
        x = Tensor(np.array([-1e4, -50.0, 0.0, 50.0, 1e4], dtype=np.float32))
        s = sigmoid(x).data
        assert (s > 0.0).all() and (s < 1.0).all()

    def test_activation_dispatch(self):
        assert activation("relu", Tensor([-1.0])).data[0] == 0.0
        with pytest.raises(ValueError, match="unknown activation"):
            activation("tanh", Tensor([0.0]))

    def test_softmax_rows_sum_to_one(self, rng):
        s = softmax(Tensor(rng.standard_normal((5, 7)), dtype=np.float64)).data
        assert np.abs(s.sum(axis=1) - 1.0).max() < 1e-12

    def test_clip_bounds(self):
        out = clip(Tensor([-1.0, 0.5, 2.0]), 0.0, 1.0)
        assert np.array_equal(out.data, [0.0, 0.5, 1.0])


class TestPool:
    def test_channel_max_single_channel_identity(self, rng):
        x = rng.uniform(size=(4, 5, 1)).astype(np.float32)
        assert np.array_equal(channel_max(Tensor(x)).data, x)

    def test_channel_avg_two_values(self):
        x = np.zeros((1, 1, 2), dtype=np.float32)
        x[0, 0] = [1.0, 3.0]
        assert channel_avg(Tensor(x)).data[0, 0, 0] == 2.0

    def test_upsample2x_replication(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1))
        out = upsample2x(x).data[:, :, 0]
        expect = np.array(
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float64
        )
        assert np.array_equal(out, expect)

    def test_upsample_then_avgpool_is_identity(self, rng):
        x = rng.standard_normal((5, 7, 3)).astype(np.float32)
        up = upsample2x(Tensor(x)).data
        down = up.reshape(5, 2, 7, 2, 3).mean(axis=(1, 3))
        assert np.array_equal(down.astype(np.float32), x)

    def test_global_vertex_avg(self, rng):
        m = rng.standard_normal((6, 4))
        out = global_vertex_avg(Tensor(m, dtype=np.float64)).data
        assert out.shape == (1, 4)
        assert np.abs(out[0] - m.mean(axis=0)).max() < 1e-12

    def test_rank_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rank-3"):
            channel_avg(Tensor(np.zeros((3, 3))))
        with pytest.raises(ValueError, match="rank-2"):
            global_vertex_avg(Tensor(np.zeros((3, 3, 1))))
        with pytest.raises(ValueError, match="unknown pool kind"):
            pool("median", Tensor(np.zeros((3, 3, 1))))

    def test_pool_dispatch(self, rng):
        x = Tensor(rng.uniform(size=(4, 4, 2)).astype(np.float32))
        assert pool("channel_avg", x).shape == (4, 4, 1)
        assert pool("channel_max", x).shape == (4, 4, 1)
        assert pool("upsample2x", x).shape == (8, 8, 2)


class TestDescriptorOracle:
    def test_channel_stats_match_loop(self, rng):
        x = rng.uniform(size=(5, 5, 6))
        t = Tensor(x, dtype=np.float64)
        avg = channel_avg(t).data[:, :, 0]
        mx = channel_max(t).data[:, :, 0]
        for i in range(5):
            for j in range(5):
                assert avg[i, j] == pytest.approx(sum(x[i, j]) / 6, abs=1e-12)
                assert mx[i, j] == max(x[i, j])
