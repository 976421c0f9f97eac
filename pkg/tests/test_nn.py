import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from divnet.exceptions import ContractError, InputError, NumericError, ShapeError, SpecError
from divnet.nn import (
    DenseNet,
    Gradients,
    Layer,
    LayerSpec,
    OptimizerState,
    dense_backward,
    dense_forward,
    gradient_check,
    loss_mse,
    loss_softmax_xent,
    optimizer_step,
    predict,
    softmax,
    stack_params,
)

from conftest import random_batch, random_net


def fixed_net(weight, bias, activation="identity", dropout=0.0):
    weight = np.asarray(weight, dtype=float)
    spec = LayerSpec(weight.shape[1], weight.shape[0], activation, dropout)
    return DenseNet([Layer(weight, np.asarray(bias, dtype=float), spec)])


class TestLayerSpec:
    def test_rejects_zero_dims(self):
        with pytest.raises(SpecError):
            LayerSpec(0, 3)

    def test_rejects_unknown_activation(self):
        with pytest.raises(SpecError):
            LayerSpec(2, 3, "gelu")

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_rejects_bad_dropout(self, rate):
        with pytest.raises(SpecError):
            LayerSpec(2, 3, "relu", rate)

    def test_softmax_only_last(self):
        with pytest.raises(SpecError):
            DenseNet.from_specs([LayerSpec(2, 3, "softmax"), LayerSpec(3, 2)], 0)

    def test_dimension_chain(self):
        with pytest.raises(SpecError, match="layer 0"):
            DenseNet.from_specs([LayerSpec(2, 3), LayerSpec(4, 2)], 0)

    def test_dict_roundtrip(self):
        s = LayerSpec(3, 4, "tanh", 0.25)
        assert LayerSpec.from_dict(s.to_dict()) == s


class TestForward:
    def test_identity_layer(self):
        out, _ = dense_forward(fixed_net(np.eye(2), [0, 0]), [[1.0, 2.0]])
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_relu_layer(self):
        out, _ = dense_forward(fixed_net(np.eye(2), [0, 0], "relu"), [[-1.0, 3.0]])
        np.testing.assert_array_equal(out, [[0.0, 3.0]])

    def test_softmax_uniform(self):
        out, _ = dense_forward(fixed_net(np.zeros((3, 2)), [0, 0, 0], "softmax"), [[0.3, -2.0]])
        np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_shape_error_names_layer(self):
        net = DenseNet.from_specs([LayerSpec(3, 4), LayerSpec(4, 2)], 0)
        with pytest.raises(ShapeError, match="layer 0"):
            dense_forward(net, np.zeros((2, 5)))

    def test_output_shape(self, rng):
        net = DenseNet.from_specs([LayerSpec(5, 7, "relu"), LayerSpec(7, 3, "softmax")], 1)
        out, cache = dense_forward(net, rng.normal(size=(11, 5)))
        assert out.shape == (11, 3)
        assert len(cache.pre) == len(cache.masks) == 2

    def test_predict_matches_infer_forward(self, rng):
        net = DenseNet.from_specs([LayerSpec(4, 6, "tanh", 0.5), LayerSpec(6, 2)], 3).infer()
        X = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(predict(net, X), dense_forward(net, X)[0])


class TestSoftmax:
    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 12)),
                  elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_rows_are_distributions_and_shift_invariant(self, z, c):
        p = softmax(z)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(p >= 0) and np.all(p <= 1)
        np.testing.assert_allclose(softmax(z + c), p, atol=1e-9)

    def test_strictly_inside_unit_interval_for_moderate_logits(self, rng):
        p = softmax(rng.normal(scale=5, size=(100, 10)))
        assert np.all(p > 0) and np.all(p < 1)


class TestDropout:
    def test_infer_mode_is_identity(self, rng):
        net = fixed_net(np.eye(4), np.zeros(4), "identity", 0.5).infer()
        X = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(dense_forward(net, X, 0)[0], X)

    def test_rate_zero_train_mode_is_identity(self, rng):
        net = fixed_net(np.eye(4), np.zeros(4), "identity", 0.0).train()
        X = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(dense_forward(net, X, 0)[0], X)

    def test_inverted_scaling_preserves_expectation(self):
        net = fixed_net(np.eye(3), np.zeros(3), "identity", 0.3).train()
        x = np.array([[1.0, -2.0, 0.5]])
        batch = np.repeat(x, 20_000, axis=0)
        out, _ = dense_forward(net, batch, 42)
        np.testing.assert_allclose(out.mean(axis=0), x[0], rtol=0.02)

    def test_masks_seeded(self, rng):
        net = fixed_net(np.eye(4), np.zeros(4), "identity", 0.5).train()
        X = rng.normal(size=(6, 4))
        np.testing.assert_array_equal(dense_forward(net, X, 9)[0], dense_forward(net, X, 9)[0])


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        net = DenseNet.from_specs([LayerSpec(3, 5, "tanh"), LayerSpec(5, 2)], 0)
        X = rng.normal(size=(4, 3))
        out, cache = dense_forward(net, X)
        g = dense_backward(net, cache, np.zeros_like(out))
        for a in g.arrays():
            assert not a.any()

    def test_linear_single_sample(self):
        x = np.array([[2.0, -1.0, 3.0]])
        net = fixed_net(np.ones((1, 3)), [0.5])
        out, cache = dense_forward(net, x)
        g = dense_backward(net, cache, np.ones_like(out))
        np.testing.assert_array_equal(g.weights[0], np.outer([1.0], x[0]))
        np.testing.assert_array_equal(g.biases[0], [1.0])

    def test_gradient_shapes(self, rng):
        net = DenseNet.from_specs([LayerSpec(3, 5, "relu"), LayerSpec(5, 4, "softmax")], 0)
        out, cache = dense_forward(net, rng.normal(size=(6, 3)))
        g = dense_backward(net, cache, rng.normal(size=out.shape))
        assert [a.shape for a in g.arrays()] == [p.shape for p in net.parameters()]

    def test_stale_cache_rejected(self, rng):
        net = DenseNet.from_specs([LayerSpec(3, 2)], 0)
        out, cache = dense_forward(net, rng.normal(size=(2, 3)))
        g = dense_backward(net, cache, np.ones_like(out))
        optimizer_step(net, g, OptimizerState.for_net(net, "sgd", 0.1))
        with pytest.raises(ContractError):
            dense_backward(net, cache, np.ones_like(out))

    def test_foreign_cache_rejected(self, rng):
        a = DenseNet.from_specs([LayerSpec(3, 2)], 0)
        b = DenseNet.from_specs([LayerSpec(3, 2)], 0)
        out, cache = dense_forward(a, rng.normal(size=(2, 3)))
        with pytest.raises(ContractError):
            dense_backward(b, cache, np.ones_like(out))

    def test_upstream_shape_checked(self, rng):
        net = DenseNet.from_specs([LayerSpec(3, 2)], 0)
        _, cache = dense_forward(net, rng.normal(size=(2, 3)))
        with pytest.raises(ShapeError):
            dense_backward(net, cache, np.ones((3, 2)))

    def test_two_layer_matches_finite_differences(self, rng):
        net = DenseNet.from_specs([LayerSpec(4, 5, "tanh"), LayerSpec(5, 3, "sigmoid")], 7)
        X, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 3))
        assert gradient_check(net, X, y, "mse") < 1e-5


class TestLosses:
    def test_xent_uniform(self):
        loss, _ = loss_softmax_xent([[0.0, 0.0]], [0])
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_xent_saturated_no_overflow(self):
        with np.errstate(over="raise"):
            loss, grad = loss_softmax_xent([[1000.0, 0.0]], [0])
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_xent_label_range(self):
        with pytest.raises(InputError):
            loss_softmax_xent([[0.0, 1.0]], [2])
        with pytest.raises(InputError):
            loss_softmax_xent([[0.0, 1.0]], [-1])

    def test_xent_grad_finite_differences(self, rng):
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        _, grad = loss_softmax_xent(logits, labels)
        eps = 1e-6
        num = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            up, down = logits.copy(), logits.copy()
            up[idx] += eps
            down[idx] -= eps
            num[idx] = (loss_softmax_xent(up, labels)[0] - loss_softmax_xent(down, labels)[0]) / (2 * eps)
        np.testing.assert_allclose(grad, num, atol=1e-6)

    def test_mse_equal(self):
        loss, grad = loss_mse([[1.0, 2.0]], [[1.0, 2.0]])
        assert loss == 0.0 and not grad.any()

    def test_mse_direct(self):
        loss, grad = loss_mse([[2.0]], [[0.0]])
        assert loss == 4.0
        np.testing.assert_array_equal(grad, [[4.0]])

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_mse([[1.0, 2.0]], [[1.0]])

    def test_mse_grad_finite_differences(self, rng):
        pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        _, grad = loss_mse(pred, target)
        eps = 1e-6
        num = np.zeros_like(pred)
        for idx in np.ndindex(*pred.shape):
            up, down = pred.copy(), pred.copy()
            up[idx] += eps
            down[idx] -= eps
            num[idx] = (loss_mse(up, target)[0] - loss_mse(down, target)[0]) / (2 * eps)
        np.testing.assert_allclose(grad, num, atol=1e-6)


class TestOptimizer:
    def _one_param_net(self, value):
        return fixed_net([[value]], [0.0])

    def test_sgd_rule(self):
        net = self._one_param_net(1.0)
        g = Gradients([np.array([[1.0]])], [np.array([0.0])])
        optimizer_step(net, g, OptimizerState.for_net(net, "sgd", 0.1))
        assert net.layers[0].weight[0, 0] == pytest.approx(0.9, abs=1e-15)

    def test_zero_grads_keep_params_but_count_step(self):
        net = DenseNet.from_specs([LayerSpec(3, 2, "relu")], 0)
        before = [p.copy() for p in net.parameters()]
        state = OptimizerState.for_net(net, "adam", 1e-3)
        zeros = Gradients([np.zeros((2, 3))], [np.zeros(2)])
        optimizer_step(net, zeros, state)
        assert state.step == 1
        for a, b in zip(before, net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_adam_first_step_magnitude(self):
        # hand-computed: m_hat = 1, v_hat = 1, update = lr / (1 + 1e-8)
        net = DenseNet.from_specs([LayerSpec(3, 2)], 0)
        before = [p.copy() for p in net.parameters()]
        lr = 0.01
        ones = Gradients([np.ones((2, 3))], [np.ones(2)])
        optimizer_step(net, ones, OptimizerState.for_net(net, "adam", lr))
        for a, b in zip(before, net.parameters()):
            np.testing.assert_allclose(a - b, lr / (1 + 1e-8), atol=1e-9)
            np.testing.assert_allclose(a - b, lr, atol=1e-9)

    def test_moments_match_param_shapes(self):
        net = DenseNet.from_specs([LayerSpec(3, 4, "relu"), LayerSpec(4, 2)], 0)
        state = OptimizerState.for_net(net, "adam")
        assert [m.shape for m in state.first_moment] == [p.shape for p in net.parameters()]
        assert [v.shape for v in state.second_moment] == [p.shape for p in net.parameters()]

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_gradient_aborts(self, bad):
        net = self._one_param_net(1.0)
        g = Gradients([np.array([[bad]])], [np.array([0.0])])
        with pytest.raises(NumericError):
            optimizer_step(net, g, OptimizerState.for_net(net, "sgd", 0.1))
        assert net.layers[0].weight[0, 0] == 1.0

    def test_bad_config(self):
        with pytest.raises(SpecError):
            OptimizerState("rmsprop", 0.1)
        with pytest.raises(SpecError):
            OptimizerState("sgd", 0.0)


class TestGradientCheck:
    @pytest.mark.parametrize("loss_kind", ["xent", "mse"])
    def test_random_nets(self, loss_kind):
        rng = np.random.default_rng(99)
        for _ in range(10):
            net = random_net(rng, loss_kind)
            X, y = random_batch(rng, net, loss_kind)
            assert gradient_check(net, X, y, loss_kind, seed=5) < 1e-4

    def test_detects_corruption(self, rng):
        net = DenseNet.from_specs([LayerSpec(3, 4, "tanh"), LayerSpec(4, 2)], 1)
        X, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        out, cache = dense_forward(net, X)
        _, g, _ = __import__("divnet.nn", fromlist=["task_loss"]).task_loss(net, cache, y, "regression")
        grads = dense_backward(net, cache, g)
        grads.weights[1][0, 0] *= 2.0
        assert gradient_check(net, X, y, "mse", analytic=grads) > 0.3

    def test_bias_only_edge(self, rng):
        # a 1->1 identity layer: one weight and one bias, both checked
        net = fixed_net([[0.0]], [0.3])
        X, y = rng.normal(size=(4, 1)), rng.normal(size=(4, 1))
        assert gradient_check(net, X, y, "mse") < 1e-6

    def test_parameter_cap(self):
        net = DenseNet.from_specs([LayerSpec(200, 60)], 0)
        with pytest.raises(SpecError):
            gradient_check(net, np.zeros((1, 200)), np.zeros((1, 60)), "mse")


class TestDenseNet:
    def test_parameter_count_closed_form(self):
        specs = [LayerSpec(7, 5, "relu"), LayerSpec(5, 3, "tanh"), LayerSpec(3, 2)]
        net = DenseNet.from_specs(specs, 0)
        assert net.parameter_count == 7 * 5 + 5 + 5 * 3 + 3 + 3 * 2 + 2 == stack_params(specs)

    def test_init_deterministic_and_seed_sensitive(self):
        specs = [LayerSpec(4, 6, "relu"), LayerSpec(6, 2)]
        a, b, c = (DenseNet.from_specs(specs, s) for s in (3, 3, 4))
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)
        assert not np.array_equal(a.layers[0].weight, c.layers[0].weight)

    def test_init_ranges(self):
        relu = DenseNet.from_specs([LayerSpec(50, 40, "relu")], 0).layers[0]
        tanh = DenseNet.from_specs([LayerSpec(50, 40, "tanh")], 0).layers[0]
        assert np.abs(relu.weight).max() <= math.sqrt(6 / 50)
        assert np.abs(tanh.weight).max() <= math.sqrt(6 / 90)
        assert not relu.bias.any() and not tanh.bias.any()

    def test_training_is_bit_reproducible(self, rng):
        from divnet.training import TrainConfig, train_net

        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        specs = [LayerSpec(3, 8, "relu", 0.2), LayerSpec(8, 1)]
        cfg = TrainConfig(epochs=3, batch_size=8)
        nets = [DenseNet.from_specs(specs, 5) for _ in range(2)]
        logs = [train_net(n, X, y, "regression", cfg, 5) for n in nets]
        assert logs[0].losses == logs[1].losses
        for a, b in zip(nets[0].parameters(), nets[1].parameters()):
            np.testing.assert_array_equal(a, b)

    def test_all_outputs_finite(self, rng):
        net = DenseNet.from_specs([LayerSpec(3, 4, "sigmoid"), LayerSpec(4, 3, "softmax")], 0)
        out, _ = dense_forward(net, rng.normal(scale=1e3, size=(5, 3)))
        assert np.all(np.isfinite(out))
