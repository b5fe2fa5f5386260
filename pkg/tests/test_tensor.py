import numpy as np
import pytest

from pfcnet import tensor as T
from pfcnet.errors import ContractError, DimensionError, LabelError
from pfcnet.tensor import Tensor


def matmul_oracle(a, b):
    r, k = a.shape
    k2, c = b.shape
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def conv_oracle(x, w, stride, padding):
    # direct nested-loop cross-correlation with zero padding
    cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((cin, h + 2 * padding, wid + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wid] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wid + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for y in range(ho):
            for z in range(wo):
                acc = 0.0
                for c in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[c, y * stride + i, z * stride + j] * w[o, c, i, j]
                out[o, y, z] = acc
    return out


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[5.0], [6.0]]))
        assert np.array_equal(out.data, [[5.0], [6.0]])

    def test_against_oracle_fixed(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0], [6.0]])
        expected = matmul_oracle(a, b)
        assert np.array_equal(expected, [[17.0], [39.0]])
        assert np.array_equal(T.matmul(Tensor(a), Tensor(b)).data, expected)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_against_oracle_random(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.allclose(got, matmul_oracle(a, b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestConv2d:
    def test_all_ones_kernel(self):
        x = np.arange(1, 10, dtype=np.float64).reshape(1, 3, 3)
        w = np.ones((1, 1, 3, 3))
        expected = conv_oracle(x, w, 1, 1)
        assert expected[0, 1, 1] == 45.0
        assert expected[0, 0, 0] == 12.0
        got = T.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
        assert np.allclose(got, expected, atol=1e-12)

    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 4, 5))
        w = np.zeros((2, 2, 1, 1))
        w[0, 0, 0, 0] = w[1, 1, 0, 0] = 1.0
        got = T.conv2d(Tensor(x), Tensor(w)).data
        assert np.array_equal(got, x)

    def test_stride_two_output_shape(self):
        x = Tensor(np.zeros((1, 4, 4)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        assert T.conv2d(x, w, stride=2).shape == (1, 2, 2)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 2)])
    def test_against_oracle_random(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(3, 7, 6))
        w = rng.normal(size=(2, 3, 3, 3))
        got = T.conv2d(Tensor(x), Tensor(w), stride, padding).data
        assert np.allclose(got, conv_oracle(x, w, stride, padding), atol=1e-10)

    def test_grouped_matches_per_group(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 6, 5, 4))
        w = rng.normal(size=(4, 3, 3, 3))
        got = T.conv2d(Tensor(x), Tensor(w), 1, 1, groups=2).data
        for g in range(2):
            part = T.conv2d(Tensor(x[:, 3 * g:3 * g + 3]),
                            Tensor(w[2 * g:2 * g + 2]), 1, 1).data
            assert np.allclose(got[:, 2 * g:2 * g + 2], part, atol=1e-12)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError, match="larger than padded"):
            T.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="channel mismatch"):
            T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.ones((1, 3, 1, 1))))

    def test_batched_matches_per_image(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 2, 5, 5))
        w = rng.normal(size=(4, 2, 3, 3))
        got = T.conv2d(Tensor(x), Tensor(w), 2, 1).data
        for b in range(3):
            single = T.conv2d(Tensor(x[b]), Tensor(w), 2, 1).data
            assert np.allclose(got[b], single, atol=1e-12)


class TestActivation:
    def test_relu(self):
        out = T.activation(Tensor([-1.0, 2.0]), "relu")
        assert np.array_equal(out.data, [0.0, 2.0])

    def test_sigmoid_zero(self):
        assert T.activation(Tensor([0.0]), "sigmoid").data[0] == 0.5

    def test_sigmoid_formula(self):
        expected = 1.0 / (1.0 + np.exp(-2.0))  # 64-bit formula evaluation
        got = T.sigmoid(Tensor(np.array([2.0]))).data[0]
        assert abs(got - expected) < 1e-15
        assert abs(got - 0.8807970779778823) < 1e-12

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            T.activation(Tensor([0.0]), "tanh")


class TestPooling:
    def test_constant_map(self):
        x = Tensor(np.full((3, 4, 5), 2.25))
        for kind in ("average", "max"):
            assert np.allclose(T.pool2d_global(x, kind).data, 2.25)

    def test_max(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert T.pool2d_global(x, "max").data[0] == 4.0

    def test_average(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert T.pool2d_global(x, "average").data[0] == 2.5

    def test_empty_spatial(self):
        with pytest.raises(DimensionError, match="spatial"):
            T.pool2d_global(Tensor(np.zeros((2, 0, 3))), "max")

    def test_max_grad_goes_to_first_maximum(self):
        x = Tensor(np.array([[[1.0, 4.0], [4.0, 0.0]]]), requires_grad=True)
        T.backward(T.pool2d_global(x, "max").sum())
        assert np.array_equal(x.grad, [[[0.0, 1.0], [0.0, 0.0]]])


class TestConcat:
    def test_doubles_length(self):
        v = Tensor(np.arange(5.0))
        assert T.concat([v, v]).shape == (10,)

    def test_single_part(self):
        v = Tensor(np.arange(4.0))
        assert np.array_equal(T.concat([v]).data, v.data)

    def test_three_plus_two(self):
        out = T.concat([Tensor(np.zeros(3)), Tensor(np.zeros(2))])
        assert out.shape == (5,)

    def test_mismatched_extents(self):
        with pytest.raises(DimensionError, match="extents differ"):
            T.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_concat_slice_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        parts = [Tensor(rng.normal(size=(3, k))) for k in (2, 5, 1)]
        joined = T.concat(parts, axis=1)
        start = 0
        for p in parts:
            width = p.shape[1]
            back = joined[:, start:start + width]
            assert np.array_equal(back.data, p.data)  # bit-exact
            start += width


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.softmax_cross_entropy(Tensor(np.zeros((2, 4))), [0, 3])
        assert float(loss.data) == pytest.approx(np.log(4.0), abs=1e-12)

    def test_saturated_correct_class(self):
        loss = T.softmax_cross_entropy(Tensor(np.array([[100.0, 0.0]])), [0])
        assert float(loss.data) < 1e-10

    def test_formula_value(self):
        # independent 64-bit evaluation of -log softmax([1,2])[0]
        expected = np.log(np.exp(1.0) + np.exp(2.0)) - 1.0
        loss = T.softmax_cross_entropy(Tensor(np.array([[1.0, 2.0]])), [0])
        assert float(loss.data) == pytest.approx(expected, abs=1e-12)
        assert float(loss.data) == pytest.approx(1.313262, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(LabelError, match="label 4 at batch index 1"):
            T.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 4])

    @pytest.mark.parametrize("seed", range(5))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        logits = Tensor(rng.normal(scale=3.0, size=(4, 6)))
        labels = rng.integers(0, 6, size=4)
        assert float(T.softmax_cross_entropy(logits, labels).data) >= 0.0

    def test_matches_naive_formula(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(5, 4))
        labels = [3, 0, 2, 1, 1]
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expected = -np.log(probs[np.arange(5), labels]).mean()
        got = float(T.softmax_cross_entropy(Tensor(logits), labels).data)
        assert got == pytest.approx(expected, rel=1e-12)


class TestFiniteChecks:
    def test_debug_mode_catches_nan(self):
        from pfcnet.errors import NumericError
        T.set_finite_checks(True)
        try:
            with np.errstate(over="ignore"), pytest.raises(NumericError):
                T.mul(Tensor([1e308]), Tensor([1e308]))
        finally:
            T.set_finite_checks(False)
