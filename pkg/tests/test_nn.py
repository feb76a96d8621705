import numpy as np
import pytest

from mcnn import nn
from oracles import conv3d_oracle, finite_difference, maxpool_oracle


def make_conv(kernel, ci, co, stride=(1, 1, 1), padding="valid", activation="identity", seed=0):
    return nn.new_conv3d(kernel, ci, co, stride, padding, activation, seed=seed)


class TestConvForward:
    def test_1x1x1_identity_kernel_passthrough(self):
        layer = make_conv((1, 1, 1), 1, 1)
        layer.kernels.values[...] = 1.0
        layer.biases.values[...] = 0.0
        x = np.random.default_rng(0).standard_normal((3, 4, 5, 1))
        assert np.allclose(nn.conv3d_forward(layer, x), x)

    def test_all_ones_window_sums(self):
        layer = make_conv((2, 2, 2), 1, 1)
        layer.kernels.values[...] = 1.0
        layer.biases.values[...] = 0.0
        out = nn.conv3d_forward(layer, np.ones((2, 2, 2, 1)))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == pytest.approx(8.0)

    def test_paper_shaped_case_matches_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((7, 7, 40, 1))
        layer = make_conv((5, 5, 10), 1, 1, stride=(1, 1, 5), seed=3)
        out = nn.conv3d_forward(layer, x)
        assert out.shape == (3, 3, 7, 1)
        ref = conv3d_oracle(x, layer.kernels.values, layer.biases.values, (1, 1, 5))
        rel = np.abs(out - ref).max() / np.abs(ref).max()
        assert rel <= 1e-10

    def test_random_configs_match_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            ci = int(rng.integers(1, 3))
            co = int(rng.integers(1, 4))
            dims = tuple(rng.integers(3, 8, size=3)) + (ci,)
            kernel = tuple(int(rng.integers(1, d + 1)) for d in dims[:3])
            stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
            x = rng.standard_normal(dims)
            layer = make_conv(kernel, ci, co, stride=stride, seed=trial)
            out = nn.conv3d_forward(layer, x)
            ref = conv3d_oracle(x, layer.kernels.values, layer.biases.values, stride)
            assert np.abs(out - ref).max() <= 1e-10 * max(np.abs(ref).max(), 1.0)

    def test_shape_law(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            dims = tuple(rng.integers(2, 9, size=3)) + (1,)
            kernel = tuple(int(rng.integers(1, d + 1)) for d in dims[:3])
            stride = tuple(int(rng.integers(1, 4)) for _ in range(3))
            layer = make_conv(kernel, 1, 2, stride=stride)
            out = nn.conv3d_forward(layer, rng.standard_normal(dims))
            expected = tuple(
                nn.output_extent(d, k, s) for d, k, s in zip(dims[:3], kernel, stride)
            )
            assert out.shape == expected + (2,)

    def test_oversized_kernel_rejected(self):
        layer = make_conv((5, 1, 1), 1, 1)
        with pytest.raises(ValueError):
            nn.conv3d_forward(layer, np.ones((3, 3, 3, 1)))

    def test_same_padding_preserves_spatial_dims(self):
        layer = make_conv((3, 3, 2), 1, 2, padding="same")
        out = nn.conv3d_forward(layer, np.ones((5, 6, 4, 1)))
        assert out.shape == (5, 6, 3, 2)


class TestConvBackward:
    def test_zero_upstream_gives_zero_grads(self):
        layer = make_conv((2, 2, 2), 1, 2, seed=5)
        x = np.random.default_rng(5).standard_normal((4, 4, 4, 1))
        out = nn.conv3d_forward(layer, x)
        gx, gp = nn.conv3d_backward(layer, x, np.zeros_like(out))
        assert not gx.any()
        assert not gp["kernels"].any()
        assert not gp["biases"].any()

    def test_bias_gradient_sums_upstream(self):
        layer = make_conv((2, 2, 2), 1, 3, seed=6)
        x = np.random.default_rng(6).standard_normal((4, 4, 4, 1))
        out = nn.conv3d_forward(layer, x)
        up = np.random.default_rng(7).standard_normal(out.shape)
        _, gp = nn.conv3d_backward(layer, x, up)
        assert np.allclose(gp["biases"], up.sum(axis=(0, 1, 2)))

    @pytest.mark.parametrize("padding,activation", [("valid", "identity"), ("same", "relu")])
    def test_finite_differences(self, padding, activation):
        rng = np.random.default_rng(8)
        layer = make_conv((3, 2, 2), 2, 2, stride=(1, 2, 1), padding=padding,
                          activation=activation, seed=9)
        x = rng.standard_normal((5, 5, 4, 2))
        up = rng.standard_normal(nn.conv3d_forward(layer, x).shape)

        def loss():
            return float((nn.conv3d_forward(layer, x) * up).sum())

        gx, gp = nn.conv3d_backward(layer, x, up)
        fd_w = finite_difference(loss, layer.kernels.values)
        rel = np.abs(fd_w - gp["kernels"]).max() / max(np.abs(fd_w).max(), 1e-12)
        assert rel <= 1e-4
        fd_x = finite_difference(loss, x)
        rel = np.abs(fd_x - gx).max() / max(np.abs(fd_x).max(), 1e-12)
        assert rel <= 1e-4


class TestMaxPool:
    def test_global_window_is_max(self):
        x = np.random.default_rng(9).standard_normal((3, 4, 5, 2))
        pool = nn.MaxPool3DLayer((3, 4, 5), (1, 1, 1))
        out, _ = nn.maxpool3d_forward(pool, x)
        assert out.shape == (1, 1, 1, 2)
        assert np.allclose(out[0, 0, 0], x.max(axis=(0, 1, 2)))

    def test_constant_input_ties_to_first_index(self):
        x = np.full((4, 4, 4, 1), 2.5)
        pool = nn.MaxPool3DLayer((2, 2, 2), (2, 2, 2))
        out, cache = nn.maxpool3d_forward(pool, x)
        assert np.allclose(out, 2.5)
        # first index per window in scan order
        expected_first = np.array(
            [[[0, 2], [8, 10]], [[32, 34], [40, 42]]]
        ).reshape(2, 2, 2, 1)
        assert np.array_equal(cache.indices, expected_first)

    def test_paper_shaped_pool_matches_scan_oracle(self):
        x = np.random.default_rng(10).standard_normal((3, 3, 7, 2))
        pool = nn.MaxPool3DLayer((3, 3, 5), (1, 1, 2))
        out, _ = nn.maxpool3d_forward(pool, x)
        assert out.shape == (1, 1, 2, 2)
        assert np.allclose(out, maxpool_oracle(x, (3, 3, 5), (1, 1, 2)))

    def test_random_pools_match_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            dims = tuple(rng.integers(2, 7, size=3)) + (int(rng.integers(1, 4)),)
            window = tuple(int(rng.integers(1, d + 1)) for d in dims[:3])
            stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
            x = rng.standard_normal(dims)
            pool = nn.MaxPool3DLayer(window, stride)
            out, _ = nn.maxpool3d_forward(pool, x)
            assert np.allclose(out, maxpool_oracle(x, window, stride))

    def test_backward_routes_to_argmax(self):
        x = np.random.default_rng(12).standard_normal((4, 4, 4, 1))
        pool = nn.MaxPool3DLayer((2, 2, 2), (2, 2, 2))  # non-overlapping
        out, cache = nn.maxpool3d_forward(pool, x)
        up = np.random.default_rng(13).standard_normal(out.shape)
        gx = nn.maxpool3d_backward(cache, up)
        assert np.count_nonzero(gx) == out.size
        assert gx.sum() == pytest.approx(up.sum())

    def test_backward_finite_difference(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((5, 4, 6, 2))
        pool = nn.MaxPool3DLayer((2, 2, 3), (1, 2, 2))
        out, cache = nn.maxpool3d_forward(pool, x)
        up = rng.standard_normal(out.shape)
        gx = nn.maxpool3d_backward(cache, up)

        def loss():
            o, _ = nn.maxpool3d_forward(pool, x)
            return float((o * up).sum())

        fd = finite_difference(loss, x)
        rel = np.abs(fd - gx).max() / max(np.abs(fd).max(), 1e-12)
        assert rel <= 1e-4

    def test_stale_cache_rejected(self):
        x = np.random.default_rng(15).standard_normal((4, 4, 4, 1))
        pool = nn.MaxPool3DLayer((2, 2, 2), (2, 2, 2))
        _, cache = nn.maxpool3d_forward(pool, x)
        with pytest.raises(ValueError):
            nn.maxpool3d_backward(cache, np.zeros((9, 9, 9, 1)))


class TestDenseAndRelu:
    def test_identity_weights_passthrough(self):
        layer = nn.DenseLayer(
            weights=nn.LayerParams.create(np.eye(4)),
            biases=nn.LayerParams.create(np.zeros(4)),
            activation="identity",
        )
        x = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.allclose(nn.dense_forward(layer, x), x)

    def test_relu_definition_and_subgradient(self):
        x = np.array([-1.0, 0.0, 2.0])
        assert np.array_equal(nn.relu_forward(x), [0.0, 0.0, 2.0])
        grad = nn.relu_backward(x, np.ones(3))
        assert np.array_equal(grad, [0.0, 0.0, 1.0])

    def test_dense_finite_difference_sweep(self):
        rng = np.random.default_rng(16)
        layer = nn.new_dense(4, 4, "relu", seed=17)
        x = rng.standard_normal(4)
        up = rng.standard_normal(4)

        def loss():
            return float((nn.dense_forward(layer, x) * up).sum())

        gx, gp = nn.dense_backward(layer, x, up)
        for arr, grad in ((layer.weights.values, gp["weights"]),
                          (layer.biases.values, gp["biases"]),
                          (x, gx)):
            fd = finite_difference(loss, arr)
            rel = np.abs(fd - grad).max() / max(np.abs(fd).max(), 1e-12)
            assert rel <= 1e-4

    def test_shape_mismatch(self):
        layer = nn.new_dense(4, 2, "identity", seed=18)
        with pytest.raises(ValueError):
            nn.dense_forward(layer, np.zeros(5))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 16):
            loss, _ = nn.softmax_cross_entropy(np.zeros(c), 0)
            assert loss == pytest.approx(np.log(c))

    def test_extreme_logits_stable(self):
        loss, grad = nn.softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(grad).all()

    def test_grad_sums_to_zero(self):
        rng = np.random.default_rng(19)
        for _ in range(5):
            logits = rng.standard_normal(6) * 10
            _, grad = nn.softmax_cross_entropy(logits, int(rng.integers(0, 6)))
            assert grad.sum() == pytest.approx(0.0, abs=1e-12)

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy(np.zeros(3), 3)


class TestGaussianInit:
    def test_deterministic(self):
        a = nn.gaussian_init((4, 4), 0.05, 42)
        b = nn.gaussian_init((4, 4), 0.05, 42)
        assert np.array_equal(a, b)

    def test_empirical_stddev(self):
        draws = nn.gaussian_init((1_000_000,), 0.05, 7)
        assert abs(draws.std() - 0.05) / 0.05 <= 0.01
        assert abs(draws.mean()) <= 5 * 0.05 / 1000

    def test_different_seeds_differ(self):
        assert nn.gaussian_init((1,), 1.0, 1)[0] != nn.gaussian_init((1,), 1.0, 2)[0]

    def test_bad_stddev(self):
        with pytest.raises(ValueError):
            nn.gaussian_init((2,), 0.0, 0)


class TestBatchedParity:
    """The internal batched kernels must agree with the public per-sample
    functions exactly when run at the same precision."""

    def test_conv_and_pool_parity(self):
        rng = np.random.default_rng(20)
        conv = make_conv((3, 2, 2), 2, 3, stride=(1, 2, 1), padding="same",
                         activation="relu", seed=21)
        pool = nn.MaxPool3DLayer((2, 2, 2), (1, 1, 2), padding="same")
        xb = rng.standard_normal((4, 5, 5, 6, 2))
        out_b, cache = nn._conv3d_forward_batch(conv, xb, True)
        pooled_b, record = nn._maxpool3d_forward_batch(pool, out_b)
        for i in range(4):
            assert np.array_equal(out_b[i], nn.conv3d_forward(conv, xb[i]))
            po, _ = nn.maxpool3d_forward(pool, out_b[i])
            assert np.array_equal(pooled_b[i], po)
        up = rng.standard_normal(pooled_b.shape)
        g = nn._maxpool3d_backward_batch(record, up)
        gx_b, gp_b = nn._conv3d_backward_batch(conv, cache, g)
        acc_k = np.zeros_like(conv.kernels.values)
        acc_b = np.zeros_like(conv.biases.values)
        for i in range(4):
            _, pc = nn.maxpool3d_forward(pool, out_b[i])
            gi = nn.maxpool3d_backward(pc, up[i])
            gx, gp = nn.conv3d_backward(conv, xb[i], gi)
            assert np.allclose(gx, gx_b[i], atol=1e-12)
            acc_k += gp["kernels"]
            acc_b += gp["biases"]
        assert np.allclose(acc_k, gp_b["kernels"], atol=1e-10)
        assert np.allclose(acc_b, gp_b["biases"], atol=1e-10)
