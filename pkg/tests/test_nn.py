import numpy as np
import pytest

from qtransfer.nn import (
    Adam,
    BatchNorm,
    Conv2D,
    Dense,
    Flatten,
    MaxPool,
    ReLU,
    ResidualBlock,
    SGD,
    Tanh,
    cross_entropy,
    make_optimizer,
    scheduled_lr,
    softmax,
    softmax_cross_entropy,
)
from qtransfer.validation import ConfigError, ShapeMismatchError, UsageError

H = 1e-5
REL_TOL = 1e-4


def loss_for(layer, x, dout, train):
    return float((layer.forward(x, train=train) * dout).sum())


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def fd_input_grad(layer, x, dout, train):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += H
        xm[i] -= H
        grad[i] = (loss_for(layer, xp, dout, train) - loss_for(layer, xm, dout, train)) / (2 * H)
    return grad


def fd_param_grads(layer, x, dout, train):
    out = {}
    for name, p in layer.params.items():
        grad = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + H
            lp = loss_for(layer, x, dout, train)
            p[i] = orig - H
            lm = loss_for(layer, x, dout, train)
            p[i] = orig
            grad[i] = (lp - lm) / (2 * H)
        out[name] = grad
    return out


def check_gradients(layer, x, train=True, seed=0):
    rng = np.random.default_rng(seed)
    dout = rng.normal(size=layer.forward(x, train=train).shape)
    layer.forward(x, train=train)
    dx = layer.backward(dout)
    analytic_params = dict(layer.grads)

    fd_dx = fd_input_grad(layer, x, dout, train)
    assert rel_err(dx, fd_dx) <= REL_TOL, f"input gradient off for {type(layer).__name__}"
    fd_params = fd_param_grads(layer, x, dout, train)
    for name, fd in fd_params.items():
        assert rel_err(analytic_params[name], fd) <= REL_TOL, f"grad for {name} off"


def away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return x + margin * np.sign(x)


class TestGradientChecks:
    def test_dense(self):
        rng = np.random.default_rng(1)
        check_gradients(Dense(4, 3, rng=rng), rng.normal(size=(5, 4)))

    def test_relu(self):
        rng = np.random.default_rng(2)
        check_gradients(ReLU(), away_from_zero(rng, (4, 6)))

    def test_tanh(self):
        rng = np.random.default_rng(3)
        check_gradients(Tanh(), rng.normal(size=(4, 6)))

    def test_flatten(self):
        rng = np.random.default_rng(4)
        check_gradients(Flatten(), rng.normal(size=(2, 2, 3, 3)))

    def test_conv_padded(self):
        rng = np.random.default_rng(5)
        check_gradients(Conv2D(2, 3, 3, stride=1, padding=1, rng=rng),
                        rng.normal(size=(2, 2, 5, 5)))

    def test_conv_strided(self):
        rng = np.random.default_rng(6)
        check_gradients(Conv2D(2, 2, 3, stride=2, padding=0, rng=rng),
                        rng.normal(size=(2, 2, 6, 6)))

    def test_maxpool(self):
        rng = np.random.default_rng(7)
        check_gradients(MaxPool(2), rng.normal(size=(2, 2, 4, 4)))

    def test_maxpool_overlapping(self):
        rng = np.random.default_rng(8)
        check_gradients(MaxPool(3, stride=1), rng.normal(size=(1, 2, 4, 4)))

    def test_batchnorm_2d_train(self):
        rng = np.random.default_rng(9)
        check_gradients(BatchNorm(3), rng.normal(size=(6, 3)))

    def test_batchnorm_4d_train(self):
        rng = np.random.default_rng(10)
        check_gradients(BatchNorm(2), rng.normal(size=(4, 2, 3, 3)))

    def test_batchnorm_eval(self):
        rng = np.random.default_rng(11)
        bn = BatchNorm(3)
        bn.forward(rng.normal(size=(16, 3)), train=True)  # make running stats non-trivial
        check_gradients(bn, rng.normal(size=(5, 3)), train=False)

    def test_residual_block(self):
        rng = np.random.default_rng(12)
        check_gradients(ResidualBlock(2, rng=rng), rng.normal(size=(2, 2, 4, 4)))

    def test_residual_block_projection(self):
        rng = np.random.default_rng(13)
        block = ResidualBlock(2, out_channels=4, stride=2, projection=True, rng=rng)
        check_gradients(block, rng.normal(size=(2, 2, 4, 4)))

    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(14)
        layer = Dense(3, 2, rng=rng)
        out = layer.forward(rng.normal(size=(4, 3)), train=True)
        dx = layer.backward(np.zeros_like(out))
        assert not dx.any()
        assert not layer.grads["W"].any() and not layer.grads["b"].any()


class TestForwardContracts:
    def test_relu_definition(self):
        out = ReLU().forward(np.array([[-1.0, 0.0, 2.0]]))
        np.testing.assert_array_equal(out, [[0.0, 0.0, 2.0]])

    def test_identity_conv(self):
        rng = np.random.default_rng(15)
        conv = Conv2D(1, 1, 1, rng=rng)
        conv.params["W"][:] = 1.0
        conv.params["b"][:] = 0.0
        x = rng.normal(size=(2, 1, 4, 4))
        np.testing.assert_allclose(conv.forward(x), x, atol=1e-15)

    def test_maxpool_against_window_scan(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        x[0, 0] = [[3, 1, 4, 1], [5, 9, 2, 6], [5, 3, 5, 8], [9, 7, 9, 3]]
        out = MaxPool(3, stride=1).forward(x)
        expected = np.zeros((1, 1, 2, 2))
        for i in range(2):
            for j in range(2):
                expected[0, 0, i, j] = x[0, 0, i:i + 3, j:j + 3].max()
        np.testing.assert_array_equal(out, expected)

    def test_conv_shape_errors(self):
        rng = np.random.default_rng(16)
        conv = Conv2D(2, 3, 3, rng=rng)
        with pytest.raises(ShapeMismatchError):
            conv.forward(np.zeros((1, 5, 4, 4)))
        with pytest.raises(ShapeMismatchError):
            conv.forward(np.zeros((1, 2, 2, 2)))  # smaller than kernel, no padding

    def test_dense_shape_error_reports_both_shapes(self):
        layer = Dense(4, 2, rng=np.random.default_rng(17))
        with pytest.raises(ShapeMismatchError, match="4"):
            layer.forward(np.zeros((3, 7)))

    def test_backward_before_forward(self):
        with pytest.raises(UsageError):
            ReLU().backward(np.zeros((2, 2)))

    def test_backward_consumes_cache(self):
        layer = Tanh()
        out = layer.forward(np.ones((1, 2)))
        layer.backward(np.ones_like(out))
        with pytest.raises(UsageError):
            layer.backward(np.ones_like(out))


class TestBatchNormSemantics:
    def test_train_normalizes_batch(self):
        rng = np.random.default_rng(18)
        bn = BatchNorm(3)
        out = bn.forward(rng.normal(2.0, 3.0, size=(64, 3)), train=True)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-3)

    def test_running_stats_converge(self):
        rng = np.random.default_rng(19)
        bn = BatchNorm(2)
        for _ in range(200):
            bn.forward(rng.normal(1.5, 2.0, size=(128, 2)), train=True)
        np.testing.assert_allclose(bn.buffers["running_mean"], 1.5, atol=0.2)
        np.testing.assert_allclose(bn.buffers["running_var"], 4.0, atol=0.5)

    def test_eval_uses_running_stats(self):
        bn = BatchNorm(2)
        bn.buffers["running_mean"][:] = [1.0, -1.0]
        bn.buffers["running_var"][:] = [4.0, 0.25]
        x = np.array([[3.0, 0.0]])
        out = bn.forward(x, train=False)
        np.testing.assert_allclose(out, [[2.0 / np.sqrt(4.0 + 1e-5), 1.0 / np.sqrt(0.25 + 1e-5)]])

    def test_frozen_ignores_train_flag(self):
        rng = np.random.default_rng(20)
        bn = BatchNorm(2)
        bn.set_frozen(True)
        before = {k: v.copy() for k, v in bn.buffers.items()}
        x = rng.normal(5.0, 2.0, size=(32, 2))
        out_train = bn.forward(x, train=True)
        out_eval = bn.forward(x, train=False)
        np.testing.assert_array_equal(out_train, out_eval)
        for k in before:
            np.testing.assert_array_equal(bn.buffers[k], before[k])


class TestResidualBlock:
    def test_zero_inner_weights_passes_relu_of_input(self):
        rng = np.random.default_rng(21)
        block = ResidualBlock(2, rng=rng)
        for conv in (block.conv1, block.conv2):
            conv.params["W"][:] = 0.0
            conv.params["b"][:] = 0.0
        x = rng.normal(size=(2, 2, 4, 4))
        out = block.forward(x, train=False)
        np.testing.assert_allclose(out, np.maximum(x, 0.0), atol=1e-12)
        # non-negative input passes through untouched
        xp = np.abs(x)
        np.testing.assert_allclose(block.forward(xp, train=False), xp, atol=1e-12)

    def test_matches_straight_line_composition(self):
        rng = np.random.default_rng(22)
        block = ResidualBlock(2, rng=rng)
        x = rng.normal(size=(2, 2, 4, 4))
        h = block.conv1.forward(x)
        h = block.bn1.forward(h)
        h = np.maximum(h, 0.0)
        h = block.conv2.forward(h)
        h = block.bn2.forward(h)
        expected = np.maximum(h + x, 0.0)
        np.testing.assert_allclose(block.forward(x, train=False), expected, atol=1e-12)

    def test_projection_changes_shape(self):
        rng = np.random.default_rng(23)
        block = ResidualBlock(2, out_channels=4, stride=2, projection=True, rng=rng)
        out = block.forward(rng.normal(size=(3, 2, 8, 8)), train=False)
        assert out.shape == (3, 4, 4, 4)

    def test_mismatched_channels_without_projection(self):
        with pytest.raises(ShapeMismatchError):
            ResidualBlock(2, out_channels=4, projection=False)

    def test_params_are_prefixed_and_shared(self):
        block = ResidualBlock(2, rng=np.random.default_rng(24))
        params = block.params
        assert "conv1.W" in params and "bn2.gamma" in params
        params["conv1.W"][:] = 0.0
        assert not block.conv1.params["W"].any()

    def test_set_frozen_propagates(self):
        block = ResidualBlock(2, rng=np.random.default_rng(25))
        block.set_frozen(True)
        assert block.bn1.frozen and block.conv2.frozen


class TestLosses:
    def test_softmax_symmetry(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)

    def test_softmax_large_logits_no_overflow(self):
        out = softmax(np.array([1000.0, 0.0]))
        assert np.isfinite(out).all()
        assert out[0] > 1 - 1e-12 and out[1] < 1e-12

    def test_softmax_normalization(self):
        rng = np.random.default_rng(26)
        out = softmax(rng.normal(size=(40, 7)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert (out > 0).all()

    def test_softmax_translation_invariance(self):
        rng = np.random.default_rng(27)
        z = rng.normal(size=(10, 5))
        shifted = softmax(z + 123.456)
        np.testing.assert_allclose(shifted, softmax(z), atol=1e-12)

    def test_cross_entropy_perfect_prediction(self):
        assert cross_entropy(np.array([0.0, 1.0]), 1) == 0.0

    def test_cross_entropy_binary_half(self):
        assert abs(cross_entropy(np.array([0.5, 0.5]), 1) - np.log(2.0)) <= 1e-12

    def test_cross_entropy_floor(self):
        val = cross_entropy(np.array([1.0, 0.0]), 1)
        assert np.isfinite(val)
        assert val == pytest.approx(-np.log(1e-12))

    def test_cross_entropy_batch_mean(self):
        probs = np.array([[0.25, 0.75], [0.5, 0.5]])
        expected = (-np.log(0.75) - np.log(0.5)) / 2
        assert cross_entropy(probs, np.array([1, 0])) == pytest.approx(expected, abs=1e-15)

    def test_cross_entropy_bad_label(self):
        with pytest.raises(UsageError):
            cross_entropy(np.array([0.5, 0.5]), 2)
        with pytest.raises(UsageError):
            cross_entropy(np.array([[0.5, 0.5]]), np.array([-1]))

    def test_cross_entropy_positive(self):
        rng = np.random.default_rng(28)
        probs = softmax(rng.normal(size=(30, 4)))
        labels = rng.integers(0, 4, size=30)
        assert cross_entropy(probs, labels) >= 0.0

    def test_fused_loss_gradient_matches_fd(self):
        rng = np.random.default_rng(29)
        logits = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        _, _, dlogits = softmax_cross_entropy(logits, labels)
        fd = np.zeros_like(logits)
        it = np.nditer(logits, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            zp, zm = logits.copy(), logits.copy()
            zp[i] += H
            zm[i] -= H
            fd[i] = (softmax_cross_entropy(zp, labels)[0]
                     - softmax_cross_entropy(zm, labels)[0]) / (2 * H)
        assert rel_err(dlogits, fd) <= REL_TOL


class TestOptimizers:
    def test_sgd_arithmetic(self):
        theta = np.array([1.0])
        SGD(lr=0.1).step([("theta", theta, np.array([0.5]))])
        assert theta[0] == pytest.approx(0.95, abs=1e-15)

    def test_zero_gradient_is_noop(self):
        for opt in (SGD(lr=0.1), Adam(lr=0.1)):
            theta = np.array([1.0, -2.0])
            before = theta.copy()
            for _ in range(3):
                opt.step([("theta", theta, np.zeros(2))])
            np.testing.assert_array_equal(theta, before)

    def test_adam_converges_on_quadratic(self):
        # minimize (theta - 3)^2 from theta = 3.5
        theta = np.array([3.5])
        opt = Adam(lr=0.02)
        for _ in range(100):
            grad = 2.0 * (theta - 3.0)
            opt.step([("theta", theta, grad)])
        assert abs(theta[0] - 3.0) <= 1e-3

    def test_adam_beats_plain_descent_direction(self):
        # first Adam step moves against the gradient sign with magnitude ~ lr
        theta = np.array([5.0])
        opt = Adam(lr=0.01)
        opt.step([("theta", theta, np.array([123.0]))])
        assert theta[0] == pytest.approx(5.0 - 0.01, abs=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            SGD(lr=0.1).step([("theta", np.zeros(2), np.zeros(3))])
        with pytest.raises(ShapeMismatchError):
            Adam(lr=0.1).step([("theta", np.zeros(2), np.zeros((2, 1)))])

    def test_bad_lr(self):
        with pytest.raises(ConfigError):
            SGD(lr=0.0)
        with pytest.raises(ConfigError):
            Adam(lr=-1.0)

    def test_factory(self):
        assert isinstance(make_optimizer("adam", 0.1), Adam)
        assert isinstance(make_optimizer("sgd", 0.1), SGD)
        with pytest.raises(ConfigError):
            make_optimizer("rmsprop", 0.1)

    def test_omitted_params_untouched(self):
        frozen = np.array([1.0, 2.0])
        live = np.array([1.0, 2.0])
        opt = Adam(lr=0.5)
        for _ in range(5):
            opt.step([("live", live, np.ones(2))])
        np.testing.assert_array_equal(frozen, [1.0, 2.0])
        assert not np.array_equal(live, [1.0, 2.0])


class TestSchedules:
    def test_step_decay_values(self):
        assert scheduled_lr("step_decay_0.1_every_10", 0.0004, 0, 50) == 0.0004
        assert scheduled_lr("step_decay_0.1_every_10", 0.0004, 9, 50) == 0.0004
        assert scheduled_lr("step_decay_0.1_every_10", 0.0004, 10, 50) == pytest.approx(0.00004)
        assert scheduled_lr("step_decay_0.1_every_10", 0.0004, 25, 50) == pytest.approx(4e-6)

    def test_linear_decay_values(self):
        assert scheduled_lr("constant_then_linear_decay", 0.0004, 0, 50) == 0.0004
        assert scheduled_lr("constant_then_linear_decay", 0.0004, 24, 50) == 0.0004
        assert scheduled_lr("constant_then_linear_decay", 0.0004, 25, 50) == pytest.approx(0.0004)
        assert scheduled_lr("constant_then_linear_decay", 0.0004, 49, 50) == pytest.approx(0.0004 / 25)

    def test_linear_decay_monotone_nonincreasing(self):
        lrs = [scheduled_lr("constant_then_linear_decay", 1.0, e, 50) for e in range(50)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert lrs[-1] > 0

    def test_epoch_out_of_range(self):
        with pytest.raises(ConfigError):
            scheduled_lr("step_decay_0.1_every_10", 0.1, 50, 50)
        with pytest.raises(ConfigError):
            scheduled_lr("constant_then_linear_decay", 0.1, -1, 50)

    def test_unknown_schedule(self):
        with pytest.raises(ConfigError):
            scheduled_lr("cosine", 0.1, 0, 50)
