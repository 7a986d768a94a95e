import numpy as np
import pytest

from glind import autodiff as ad
from glind.autodiff import Tensor
from glind.errors import ConfigError, NonFiniteError, ShapeError, UsageError

from conftest import central_difference, max_rel_err


class TestTensorInvariants:
    def test_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])

    def test_rejects_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([[np.inf]])

    def test_op_output_checked(self):
        with pytest.raises(NonFiniteError):
            ad.log(Tensor([0.0]))

    def test_owns_storage(self):
        src = np.ones(3)
        t = Tensor(src)
        src[0] = 5.0
        assert t.data[0] == 1.0


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
        assert np.array_equal(out.data, a)

    def test_scalar_case(self):
        out = ad.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
        assert out.data[0, 0] == 6.0

    def test_hand_expansion(self):
        # row-by-column sums expanded by hand
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradients_match_finite_differences(self, rng):
        a0 = rng.standard_normal((3, 4))
        b0 = rng.standard_normal((4, 2))

        a = Tensor(a0, requires_grad=True)
        b = Tensor(b0, requires_grad=True)
        loss = ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b)))
        loss.backward()

        na = central_difference(lambda x: float(((x @ b0) ** 2).sum()), a0)
        nb = central_difference(lambda x: float(((a0 @ x) ** 2).sum()), b0)
        assert max_rel_err(a.grad, na) < 1e-6
        assert max_rel_err(b.grad, nb) < 1e-6


class TestSoftmaxRows:
    def test_symmetry(self):
        out = ad.softmax_rows(Tensor([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_direct_evaluation(self):
        # exp-normalization of [0, ln 3] gives 1/(1+3) and 3/(1+3)
        out = ad.softmax_rows(Tensor([[0.0, np.log(3.0)]]))
        assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-15)

    def test_shift_invariance(self, rng):
        x = rng.standard_normal((4, 5))
        base = ad.softmax_rows(Tensor(x)).data
        shifted = ad.softmax_rows(Tensor(x + 17.3)).data
        assert np.allclose(base, shifted, atol=1e-14)

    @pytest.mark.parametrize("scale", [1.0, 50.0, 100.0])
    def test_rows_sum_to_one(self, rng, scale):
        x = rng.uniform(-scale, scale, size=(20, 7))
        out = ad.softmax_rows(Tensor(x)).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12

    def test_gradient(self, rng):
        x0 = rng.standard_normal((3, 4))
        x = Tensor(x0, requires_grad=True)
        w = rng.standard_normal((3, 4))
        ad.tsum(ad.mul(ad.softmax_rows(x), Tensor(w))).backward()
        numeric = central_difference(
            lambda v: float((np.exp(v - v.max(axis=1, keepdims=True))
                             / np.exp(v - v.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True)
                             * w).sum()), x0)
        assert max_rel_err(x.grad, numeric) < 1e-6


class TestLeakyRelu:
    def test_nonnegative_passthrough(self):
        assert ad.leaky_relu(Tensor([2.5]), 0.2).data[0] == 2.5

    def test_negative_scaled(self):
        assert np.isclose(ad.leaky_relu(Tensor([-1.0]), 0.2).data[0], -0.2)

    def test_slope_out_of_range(self):
        for slope in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ConfigError):
                ad.leaky_relu(Tensor([1.0]), slope)

    def test_gradient_at_negative_point(self):
        x = Tensor([-1.0], requires_grad=True)
        ad.tsum(ad.leaky_relu(x, 0.2)).backward()
        numeric = central_difference(
            lambda v: float(np.where(v >= 0, v, 0.2 * v).sum()), np.array([-1.0]))
        assert abs(x.grad[0] - 0.2) < 1e-12
        assert abs(x.grad[0] - numeric[0]) < 1e-6


class TestL2NormalizeRows:
    def test_unit_vector_fixed_point(self):
        out = ad.l2_normalize_rows(Tensor([[0.6, 0.8]]))
        assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_divides_by_norm(self):
        out = ad.l2_normalize_rows(Tensor([[3.0, 4.0]]))
        assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_zero_row_guarded(self):
        out = ad.l2_normalize_rows(Tensor([[0.0, 0.0]]), eps=1e-12)
        assert np.array_equal(out.data, [[0.0, 0.0]])

    def test_row_norms_at_most_one(self, rng):
        x = rng.standard_normal((10, 4)) * 10
        out = ad.l2_normalize_rows(Tensor(x)).data
        assert np.all(np.sqrt((out * out).sum(axis=1)) <= 1.0 + 1e-12)

    def test_gradient(self, rng):
        x0 = rng.standard_normal((4, 3)) + 0.5
        w = rng.standard_normal((4, 3))
        x = Tensor(x0, requires_grad=True)
        ad.tsum(ad.mul(ad.l2_normalize_rows(x), Tensor(w))).backward()

        def f(v):
            norms = np.maximum(np.sqrt((v * v).sum(axis=1, keepdims=True)), 1e-12)
            return float((v / norms * w).sum())

        assert max_rel_err(x.grad, central_difference(f, x0)) < 1e-6


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        ad.tsum(ad.mul(x, x)).backward()
        assert np.array_equal(x.grad, [2.0, -4.0])

    def test_constant_graph_gives_no_gradient(self):
        p = Tensor([3.0], requires_grad=True)
        loss = ad.tsum(ad.mul(Tensor([1.0]), Tensor([2.0])))
        loss.backward()
        assert p.grad is None

    def test_crossentropy_of_softmax_matches_finite_differences(self, rng):
        w0 = rng.standard_normal((3, 5))
        x0 = rng.standard_normal((4, 5))
        labels = np.array([0, 2, 1, 2])

        w = Tensor(w0, requires_grad=True)
        logits = ad.matmul(Tensor(x0), ad.transpose(w))
        loss = ad.mul(ad.tmean(ad.select_cols(ad.log_softmax_rows(logits), labels)), -1.0)
        loss.backward()

        def f(v):
            lg = x0 @ v.T
            shifted = lg - lg.max(axis=1, keepdims=True)
            lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            return float(-lsm[np.arange(4), labels].mean())

        assert max_rel_err(w.grad, central_difference(f, w0)) < 1e-4

    def test_non_scalar_output_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            ad.mul(x, 2.0).backward()

    def test_double_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        loss = ad.tsum(ad.mul(x, x))
        loss.backward()
        with pytest.raises(UsageError):
            loss.backward()

    def test_gradient_accumulates_across_fresh_tapes(self):
        x = Tensor([2.0], requires_grad=True)
        ad.tsum(ad.mul(x, x)).backward()
        ad.tsum(ad.mul(x, x)).backward()
        assert np.array_equal(x.grad, [8.0])

    def test_shared_subexpression(self):
        x = Tensor([3.0], requires_grad=True)
        y = ad.mul(x, x)
        ad.tsum(ad.add(y, y)).backward()
        assert np.array_equal(x.grad, [12.0])


class TestDeterminism:
    def test_forward_replay_bit_identical(self, rng):
        x0 = rng.standard_normal((6, 4))
        w0 = rng.standard_normal((4, 4))

        def run():
            return ad.softmax_rows(ad.matmul(Tensor(x0), Tensor(w0))).data

        assert np.array_equal(run(), run())


class TestGatherScatter:
    def test_gather_then_scatter_roundtrip(self, rng):
        x0 = rng.standard_normal((5, 3))
        idx = np.array([0, 2, 2, 4])
        x = Tensor(x0, requires_grad=True)
        out = ad.scatter_rows(ad.gather_rows(x, idx), idx, 5)
        dense = np.zeros((5, 5))
        for i in idx:
            dense[i, i] += 1.0
        assert np.allclose(out.data, dense @ x0)

    def test_scatter_gradient(self, rng):
        x0 = rng.standard_normal((4, 2))
        idx = np.array([1, 1, 3, 0])
        w = rng.standard_normal((5, 2))
        x = Tensor(x0, requires_grad=True)
        ad.tsum(ad.mul(ad.scatter_rows(x, idx, 5), Tensor(w))).backward()

        def f(v):
            out = np.zeros((5, 2))
            np.add.at(out, idx, v)
            return float((out * w).sum())

        assert max_rel_err(x.grad, central_difference(f, x0)) < 1e-6

    def test_select_cols(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        out = ad.select_cols(x, np.array([1, 0]))
        assert np.array_equal(out.data, [2.0, 3.0])
        ad.tsum(out).backward()
        assert np.array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_narrow(self):
        x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        out = ad.narrow(x, 1, 1, 3)
        assert np.array_equal(out.data, [[1, 2], [5, 6], [9, 10]])
        ad.tsum(out).backward()
        expected = np.zeros((3, 4))
        expected[:, 1:3] = 1.0
        assert np.array_equal(x.grad, expected)


class TestBroadcasting:
    def test_bias_add_gradient(self, rng):
        x0 = rng.standard_normal((5, 3))
        b0 = rng.standard_normal(3)
        b = Tensor(b0, requires_grad=True)
        ad.tsum(ad.mul(ad.add(Tensor(x0), b), ad.add(Tensor(x0), b))).backward()
        numeric = central_difference(lambda v: float(((x0 + v) ** 2).sum()), b0)
        assert max_rel_err(b.grad, numeric) < 1e-6

    def test_row_scale_gradient(self, rng):
        x0 = rng.standard_normal((4, 3))
        s0 = rng.standard_normal((4, 1))
        s = Tensor(s0, requires_grad=True)
        ad.tsum(ad.mul(Tensor(x0), s)).backward()
        assert np.allclose(s.grad, x0.sum(axis=1, keepdims=True))
