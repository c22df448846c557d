import math

import numpy as np
import pytest

from hsidense import ops
from hsidense.errors import ContractError, DimensionError, InvalidInputError, InvalidLabelError
from hsidense.gradcheck import FD_STEP, TOLERANCE, run_model_checks, run_primitive_checks
from hsidense.tensor import Tensor, backward, no_grad, tape

from oracles import batch_norm_formula, conv2d_loops, conv3d_loops, weighted_nll


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_conv_cases(n_cases, dims, seed):
    """Random (x, w, stride, padding) tuples with valid geometry."""
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < n_cases:
        n, c, f = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        spatial = tuple(int(v) for v in rng.integers(1, 7, size=dims))
        kernel = tuple(int(v) for v in rng.integers(1, 4, size=dims))
        stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        if any(k > s + 2 * padding for k, s in zip(kernel, spatial)):
            continue
        x = rng.standard_normal((n, c) + spatial)
        w = rng.standard_normal((f, c) + kernel)
        cases.append((x, w, stride, padding))
    return cases


class TestConvolution:
    def test_identity_scaled_kernel(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_same_padding_shape_2d(self, rng):
        out = ops.conv2d(Tensor(rng.random((1, 1, 32, 32))), Tensor(rng.random((16, 1, 3, 3))), 1, 1)
        assert out.shape == (1, 16, 32, 32)

    def test_same_padding_shape_3d(self, rng):
        out = ops.conv3d(Tensor(rng.random((1, 1, 30, 32, 32))), Tensor(rng.random((8, 1, 3, 3, 3))), 1, 1)
        assert out.shape == (1, 8, 30, 32, 32)

    def test_single_voxel_kernel_is_identity(self, rng):
        x = rng.standard_normal((2, 1, 4, 5, 6))
        out = ops.conv3d(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    def test_spec_example_2d(self, rng):
        x, w = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3))
        got = ops.conv2d(Tensor(x), Tensor(w)).data
        assert np.abs(got - conv2d_loops(x, w, 1, 0)).max() < 1e-12

    def test_spec_example_3d(self, rng):
        x, w = rng.standard_normal((1, 2, 4, 5, 5)), rng.standard_normal((3, 2, 2, 3, 3))
        got = ops.conv3d(Tensor(x), Tensor(w)).data
        assert np.abs(got - conv3d_loops(x, w, 1, 0)).max() < 1e-12

    @pytest.mark.parametrize("dims", [2, 3])
    def test_matches_loop_oracle_on_random_shapes(self, dims):
        conv, oracle = (ops.conv2d, conv2d_loops) if dims == 2 else (ops.conv3d, conv3d_loops)
        worst = 0.0
        for x, w, stride, padding in random_conv_cases(100, dims, seed=dims):
            got = conv(Tensor(x), Tensor(w), stride, padding).data
            ref = oracle(x, w, stride, padding)
            assert got.shape == ref.shape
            worst = max(worst, float(np.abs(got - ref).max()))
        assert worst < 1e-12

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(rng.random((1, 2, 5, 5))), Tensor(rng.random((1, 3, 3, 3))))

    def test_kernel_larger_than_input(self, rng):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(rng.random((1, 1, 2, 2))), Tensor(rng.random((1, 1, 3, 3))))

    def test_zero_stride_rejected(self, rng):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(rng.random((1, 1, 4, 4))), Tensor(rng.random((1, 1, 3, 3))), stride=0)


class TestBatchNorm:
    def test_already_normalised_input_passes_through(self, rng):
        x = rng.standard_normal((50, 2, 10, 10))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        out = ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True)
        # with eps = 1e-5 the only deviation is the shrink factor 1/sqrt(1 + eps)
        np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + 1e-5), rtol=0, atol=1e-12)
        assert np.abs(out.data - x).max() <= 5e-6 * np.abs(x).max()

    def test_output_moments(self, rng):
        # scale >= 10 keeps the eps contribution to the variance below 1e-6
        x = 10.0 * rng.standard_normal((8, 3, 5, 5)) + 4.0
        out = ops.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True).data
        assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-10
        assert np.abs(out.var(axis=(0, 2, 3)) - 1.0).max() < 1e-6

    def test_matches_formula_oracle(self, rng):
        x = rng.standard_normal((4, 3, 3, 2, 2))
        g, b = rng.uniform(0.5, 2, 3), rng.standard_normal(3)
        out = ops.batch_norm(Tensor(x), Tensor(g), Tensor(b), np.zeros(3), np.ones(3), True).data
        assert np.abs(out - batch_norm_formula(x, g, b)).max() < 1e-10

    def test_running_stats_momentum(self, rng):
        x = rng.standard_normal((6, 2, 4, 4)) * 3.0 + 1.0
        rm, rv = np.zeros(2), np.ones(2)
        ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), rtol=1e-12)

    def test_eval_mode_uses_running_stats(self, rng):
        x = rng.standard_normal((3, 2, 4))
        rm, rv = np.array([0.5, -1.0]), np.array([2.0, 0.5])
        out = ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm.copy(), rv.copy(), False).data
        expected = (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5)
        assert np.abs(out - expected).max() < 1e-12

    def test_empty_batch(self):
        with pytest.raises(InvalidInputError):
            ops.batch_norm(Tensor(np.zeros((0, 2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           np.zeros(2), np.ones(2), True)


class TestPoolingAndDense:
    def test_gap_constant_field(self):
        out = ops.global_avg_pool(Tensor(np.full((1, 5, 4, 4), 3.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 5), 3.0))

    def test_gap_dense_invariant_to_pixel_permutation(self, rng):
        x = rng.standard_normal((2, 4, 6, 6))
        w, b = rng.standard_normal((2, 4)), rng.standard_normal(2)
        perm = rng.permutation(36)
        xs = x.reshape(2, 4, 36)[:, :, perm].reshape(2, 4, 6, 6)
        a = ops.dense(ops.global_avg_pool(Tensor(x)), Tensor(w), Tensor(b)).data
        c = ops.dense(ops.global_avg_pool(Tensor(xs)), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-14)

    def test_avg_pool_floor_crop(self):
        x = np.arange(25.0).reshape(1, 1, 5, 5)
        out = ops.avg_pool(Tensor(x), 2).data
        np.testing.assert_array_equal(out[0, 0], [[3.0, 5.0], [13.0, 15.0]])

    def test_avg_pool_3d_shape(self, rng):
        assert ops.avg_pool(Tensor(rng.random((1, 2, 30, 32, 32))), 2).shape == (1, 2, 15, 16, 16)

    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


class TestLoss:
    def test_uniform_logits_give_ln2(self):
        loss = ops.softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([0]), np.array([1.0, 1.0]))
        assert abs(loss.item() - math.log(2.0)) < 1e-15

    def test_weighted_matches_hand_computation(self, rng):
        z = rng.standard_normal((4, 2))
        y = np.array([0, 1, 1, 0])
        w = [0.85, 1.2143]
        loss = ops.softmax_cross_entropy(Tensor(z), y, np.array(w)).item()
        assert abs(loss - weighted_nll(z.tolist(), y.tolist(), w)) < 1e-12

    @pytest.mark.parametrize("labels", [[0, 2], [-1, 0], [0.5, 1.0]])
    def test_invalid_labels(self, labels):
        with pytest.raises(InvalidLabelError):
            ops.softmax_cross_entropy(Tensor(np.zeros((2, 2))), np.array(labels))

    def test_non_positive_weight(self):
        with pytest.raises(InvalidInputError):
            ops.softmax_cross_entropy(Tensor(np.zeros((1, 2))), np.array([0]), np.array([1.0, 0.0]))

    def test_softmax_rows_sum_to_one(self, rng):
        p = ops.softmax(rng.standard_normal((10, 2)) * 30)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 2, 4)), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 2, 4)))

    def test_square(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((x ** 2).sum())
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_repeated_calls_accumulate(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        backward((x * x).sum())
        backward((x * x).sum())
        np.testing.assert_array_equal(x.grad, [4.0, -8.0])
        x.zero_grad()
        assert x.grad is None or not np.any(x.grad)

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_shared_subexpression(self):
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        backward((y + y * x).sum())  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad[0] == 2 * 3.0 + 3 * 9.0

    def test_tape_is_topological(self, rng):
        a = Tensor(rng.random(3), requires_grad=True)
        b = a * 2.0
        c = b + a
        d = (c * b).sum()
        order = tape(d)
        pos = {id(t): i for i, t in enumerate(order)}
        for t in order:
            for p in t._parents:
                if id(p) in pos:
                    assert pos[id(p)] < pos[id(t)]

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_deterministic_gradients(self, rng):
        x0, w0 = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3))

        def run():
            x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)
            out = ops.relu(ops.conv2d(x, w, 1, 1))
            backward((out * out).sum())
            return out.data, x.grad, w.grad

        first, second = run(), run()
        for a, b in zip(first, second):
            assert a.tobytes() == b.tobytes()


class TestFiniteDifferences:
    def test_constants(self):
        assert FD_STEP == 1e-5
        assert TOLERANCE == 1e-4

    def test_every_primitive(self):
        results = run_primitive_checks(seed=0)
        assert len(results) >= 15
        bad = [(r.name, r.max_rel_error) for r in results if not r.passed]
        assert not bad

    def test_every_model_variant(self):
        results = run_model_checks(seed=0)
        assert {r.name for r in results} == {"model:Densenet2D", "model:Densenet2D_MS", "model:Densenet3D"}
        bad = [(r.name, r.max_rel_error) for r in results if not r.passed]
        assert not bad
