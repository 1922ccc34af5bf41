import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from chaoslab.ann import (MLP, Gradients, SigmoidMLPRegressor, TrainConfig, backprop_grad,
                          forward, gradient_check, init_weights, loss, mean_squared_error,
                          predict, sgd_update, sigmoid, sigmoid_derivative, train_supervised)
from chaoslab.exceptions import ConfigurationError, DivergenceError

from oracles import sigmoid as sigmoid_oracle

XOR = [((0.0, 0.0), (0.0,)), ((0.0, 1.0), (1.0,)), ((1.0, 0.0), (1.0,)), ((1.0, 1.0), (0.0,))]
XOR_CONFIG = TrainConfig(learning_rate=0.5, epochs=20_000, seed=0, init_scale=1.0)


def single(w, b=0.0, act="sigmoid"):
    return MLP((np.array([[w]], dtype=float),), (np.array([b], dtype=float),), act)


def random_net(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(n) for n in rng.integers(1, 11, size=depth + 1)]
    act = "sigmoid" if rng.random() < 0.5 else "identity"
    cfg = TrainConfig(seed=int(rng.integers(1 << 30)), init_scale=float(rng.uniform(0.2, 2.0)))
    net = init_weights(sizes, cfg, act)
    x = rng.uniform(-2, 2, size=sizes[0])
    t = rng.uniform(0, 1, size=sizes[-1])
    return net, x, t


class TestSigmoid:
    def test_centre(self):
        assert sigmoid(0.0) == 0.5

    def test_ln3(self):
        assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)

    @given(st.floats(min_value=-700, max_value=700))
    def test_symmetry(self, x):
        assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(min_value=-30, max_value=30))
    def test_bounds_and_oracle(self, x):
        y = sigmoid(x)
        assert 0.0 < y < 1.0
        assert y == pytest.approx(sigmoid_oracle(x), rel=1e-14)

    @given(st.floats(min_value=-30, max_value=30))
    def test_derivative_from_output(self, x):
        y = sigmoid(x)
        assert sigmoid_derivative(y) == y * (1 - y)

    def test_saturates_without_overflow(self):
        with np.errstate(over="raise", invalid="raise"):
            out = sigmoid(np.array([-1e4, 1e4]))
        assert out[0] == 0.0 and out[1] == 1.0

    def test_monotone(self):
        xs = np.linspace(-20, 20, 1001)
        assert np.all(np.diff(sigmoid(xs)) > 0)


class TestForward:
    def test_zero_net_outputs_half(self):
        net = init_weights((3, 5, 2), TrainConfig(init_scale=0.0))
        assert np.array_equal(predict(net, [0.3, -1.0, 2.0]), [0.5, 0.5])

    def test_single_neuron(self):
        out = forward(single(2.0), [0.5])
        assert out.preactivations[0][0] == 1.0
        assert out.output[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)
        assert out.output[0] == pytest.approx(0.7311, abs=1e-4)

    def test_identity_layer(self):
        net = MLP((np.eye(2),), (np.zeros(2),), "identity")
        assert np.array_equal(predict(net, [0.25, -3.0]), [0.25, -3.0])

    def test_bias_is_weight_on_constant_one(self):
        net = single(0.0, b=0.7, act="identity")
        assert predict(net, [123.0])[0] == 0.7

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            forward(init_weights((3, 2), TrainConfig()), [1.0, 2.0])

    def test_bad_chain(self):
        with pytest.raises(ConfigurationError):
            MLP((np.zeros((2, 3)), np.zeros((1, 3))), (np.zeros(2), np.zeros(1)))

    def test_non_finite_parameters(self):
        with pytest.raises(DivergenceError):
            single(math.nan)


class TestBackprop:
    def test_zero_signal_zero_gradients(self):
        net = init_weights((2, 4, 3), TrainConfig(seed=3))
        g = backprop_grad(net, [0.1, 0.2], np.zeros(3))
        assert all(np.all(w == 0) for w in g.weights) and all(np.all(b == 0) for b in g.biases)

    def test_linear_neuron_hand_gradient(self):
        net = single(1.0, act="identity")
        fp = forward(net, [2.0])
        g = backprop_grad(net, [2.0], fp.output - np.array([0.0]))
        assert g.weights[0][0, 0] == 4.0
        assert g.biases[0][0] == 2.0

    def test_hundred_random_nets(self):
        rng = np.random.default_rng(2024)
        worst = max(gradient_check(*random_net(rng)).max_relative_error for _ in range(100))
        assert worst < 1e-6

    @given(st.integers(0, 2**31 - 1))
    def test_random_net_property(self, seed):
        assert gradient_check(*random_net(np.random.default_rng(seed))).max_relative_error < 1e-6

    def test_shape_mismatch(self):
        net = init_weights((2, 3), TrainConfig())
        with pytest.raises(ConfigurationError):
            backprop_grad(net, [0.0, 0.0], np.zeros(2))


class TestGradientCheck:
    def test_linear_neuron_near_exact(self):
        report = gradient_check(single(0.7, b=-0.2, act="identity"), [1.3], [0.4])
        assert report.max_relative_error < 1e-9

    def test_random_2_4_1(self):
        net = init_weights((2, 4, 1), TrainConfig(seed=11, init_scale=1.0))
        assert gradient_check(net, [0.3, -0.8], [1.0]).max_relative_error < 1e-6

    @pytest.mark.parametrize("eps", [0.0, 1e-8, 1e-2])
    def test_eps_out_of_range(self, eps):
        with pytest.raises(ConfigurationError):
            gradient_check(single(1.0), [1.0], [0.0], eps=eps)

    def test_report_entries_non_negative(self):
        net = init_weights((3, 3, 2), TrainConfig(seed=5))
        report = gradient_check(net, [0.1, 0.2, 0.3], [0.0, 1.0])
        assert np.all(report.relative_errors >= 0)
        assert report.relative_errors.size == net.n_parameters


class TestSGD:
    def test_zero_gradients_leave_net(self):
        net = init_weights((2, 3, 1), TrainConfig(seed=1))
        zero = Gradients(tuple(np.zeros_like(w) for w in net.weights),
                         tuple(np.zeros_like(b) for b in net.biases))
        assert sgd_update(net, zero, 0.5).equals(net)

    def test_hand_step(self):
        g = Gradients((np.array([[4.0]]),), (np.array([0.0]),))
        assert sgd_update(single(1.0), g, 0.1).weights[0][0, 0] == pytest.approx(0.6, abs=1e-15)

    def test_linearity(self):
        net = init_weights((2, 3, 1), TrainConfig(seed=2))
        rng = np.random.default_rng(0)
        g1 = Gradients(tuple(rng.normal(size=w.shape) for w in net.weights),
                       tuple(rng.normal(size=b.shape) for b in net.biases))
        g2 = Gradients(tuple(rng.normal(size=w.shape) for w in net.weights),
                       tuple(rng.normal(size=b.shape) for b in net.biases))
        both = Gradients(tuple(a + b for a, b in zip(g1.weights, g2.weights)),
                         tuple(a + b for a, b in zip(g1.biases, g2.biases)))
        seq = sgd_update(sgd_update(net, g1, 0.1), g2, 0.1)
        once = sgd_update(net, both, 0.1)
        np.testing.assert_allclose(seq.parameter_vector(), once.parameter_vector(),
                                   rtol=0, atol=1e-15)

    @given(st.integers(0, 2**31 - 1))
    def test_small_step_does_not_increase_loss(self, seed):
        net, x, t = random_net(np.random.default_rng(seed))
        fp = forward(net, x)
        stepped = sgd_update(net, backprop_grad(net, x, fp.output - t, cache=fp), 1e-3)
        assert loss(stepped, x, t) <= loss(net, x, t) + 1e-15

    def test_negative_rate_rejected(self):
        with pytest.raises(ConfigurationError):
            sgd_update(single(1.0), Gradients((np.zeros((1, 1)),), (np.zeros(1),)), -0.1)


class TestInit:
    def test_same_seed_identical(self):
        a = init_weights((4, 8, 2), TrainConfig(seed=7))
        b = init_weights((4, 8, 2), TrainConfig(seed=7))
        assert a.equals(b)

    def test_different_seeds_differ(self):
        a = init_weights((4, 8, 2), TrainConfig(seed=7))
        b = init_weights((4, 8, 2), TrainConfig(seed=8))
        assert not a.equals(b)

    def test_zero_range(self):
        net = init_weights((4, 8, 2), TrainConfig(init_scale=0.0))
        assert np.all(net.parameter_vector() == 0.0)

    @given(st.floats(min_value=0.01, max_value=5.0), st.integers(0, 1000))
    def test_within_range(self, a, seed):
        net = init_weights((3, 4, 2), TrainConfig(seed=seed, init_scale=a))
        assert np.all(np.abs(net.parameter_vector()) <= a)

    def test_vector_round_trip(self):
        net = init_weights((3, 4, 2), TrainConfig(seed=1))
        again = MLP.from_vector(net.layer_sizes, net.parameter_vector(), net.output_activation)
        assert again.equals(net)


class TestTraining:
    def test_already_perfect_pair(self):
        net = init_weights((2, 3, 1), TrainConfig(seed=4))
        x = [0.2, 0.9]
        trained, losses = train_supervised(net, [(x, predict(net, x))],
                                           TrainConfig(epochs=5, seed=0))
        assert losses[0] == 0.0
        assert trained.equals(net)

    def test_xor(self):
        net = init_weights((2, 4, 1), XOR_CONFIG)
        trained, losses = train_supervised(net, XOR, XOR_CONFIG)
        assert losses.size == XOR_CONFIG.epochs
        assert mean_squared_error(trained, XOR) < 0.05

    def test_constant_target_bias(self):
        # inputs are symmetric about 0, so the quadratic optimum is w = 0, b = mean target
        data = [((x,), (0.37,)) for x in (-1.0, -0.5, 0.5, 1.0)]
        cfg = TrainConfig(learning_rate=0.05, epochs=2000, seed=0)
        trained, _ = train_supervised(single(0.8, b=-0.4, act="identity"), data, cfg)
        assert trained.biases[0][0] == pytest.approx(0.37, abs=1e-3)

    def test_deterministic(self):
        net = init_weights((2, 4, 1), XOR_CONFIG)
        cfg = TrainConfig(learning_rate=0.5, epochs=200, seed=9)
        _, a = train_supervised(net, XOR, cfg)
        _, b = train_supervised(net, XOR, cfg)
        assert np.array_equal(a, b)

    def test_fast_loop_matches_functional_path(self):
        net = init_weights((2, 3, 1), TrainConfig(seed=6))
        cfg = TrainConfig(learning_rate=0.3, epochs=3, seed=1, shuffle=False)
        trained, _ = train_supervised(net, XOR, cfg)
        ref = net
        for _ in range(cfg.epochs):
            for x, t in XOR:
                fp = forward(ref, x)
                ref = sgd_update(ref, backprop_grad(ref, x, fp.output - np.array(t), cache=fp),
                                 cfg.learning_rate)
        assert trained.equals(ref)

    def test_divergence_names_epoch(self):
        data = [((100.0,), (0.0,))]
        with pytest.raises(DivergenceError) as info, np.errstate(all="ignore"):
            train_supervised(single(1.0, act="identity"), data,
                             TrainConfig(learning_rate=10.0, epochs=100))
        assert info.value.step is not None and info.value.step < 100

    def test_empty_and_mismatched(self):
        with pytest.raises(ConfigurationError):
            train_supervised(single(1.0), [], TrainConfig())
        with pytest.raises(ConfigurationError):
            train_supervised(single(1.0), [((1.0, 2.0), (0.0,))], TrainConfig())

    @pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(epochs=0),
                                    dict(init_scale=-1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)


class TestRegressor:
    def test_fit_predict(self):
        X = np.array([x for x, _ in XOR])
        y = np.array([t[0] for _, t in XOR])
        model = SigmoidMLPRegressor(hidden_layer_sizes=(4,), output_activation="sigmoid",
                                    learning_rate=0.5, epochs=5000, init_scale=1.0)
        model.fit(X, y)
        assert model.predict(X).shape == (4,)
        assert np.mean((model.predict(X) - y) ** 2) < 0.05
        assert model.loss_curve_.shape == (5000,)

    def test_params_and_clone(self):
        model = SigmoidMLPRegressor(hidden_layer_sizes=(3, 2), learning_rate=0.2)
        params = model.get_params()
        assert params["hidden_layer_sizes"] == (3, 2) and params["learning_rate"] == 0.2
        twin = clone(model).set_params(epochs=5)
        assert twin.epochs == 5 and model.epochs != 5

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            SigmoidMLPRegressor().predict(np.zeros((1, 2)))

    def test_multi_output_and_partial_fit(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        Y = np.column_stack([X[:, 0], -X[:, 1]])
        model = SigmoidMLPRegressor(epochs=10).fit(X, Y)
        before = model.net_.parameter_vector()
        model.partial_fit(X, Y)
        assert model.predict(X).shape == (20, 2)
        assert not np.array_equal(before, model.net_.parameter_vector())

    def test_feature_count_checked(self):
        model = SigmoidMLPRegressor(epochs=2).fit(np.zeros((4, 2)), np.zeros(4))
        with pytest.raises(ValueError):
            model.predict(np.zeros((1, 3)))

    def test_score_is_r2(self):
        X = np.linspace(-1, 1, 30)[:, None]
        y = 0.5 * X[:, 0]
        model = SigmoidMLPRegressor(epochs=300, learning_rate=0.1).fit(X, y)
        assert model.score(X, y) > 0.9
