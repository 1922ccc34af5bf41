"""Feedforward sigmoid network trained by backpropagation, written from scratch.

Each neuron computes ``y = f(v)`` with ``v = w . x + w0 * b0`` and ``b0 = 1``,
so the bias vector of a layer is exactly the weight on the constant input.
Hidden layers always use the logistic sigmoid; the output layer uses the
sigmoid or the identity.

Networks are immutable: :func:`sgd_update` and the trainers return new
:class:`MLP` instances.  All randomness comes from ``numpy.random.default_rng``
(PCG64) seeded from :class:`TrainConfig`.

:class:`SigmoidMLPRegressor` wraps the same functions in the scikit-learn
estimator protocol.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigurationError, DivergenceError

ACTIVATIONS = ("sigmoid", "identity")


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))`` without overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out if out.ndim else float(out)


def sigmoid_derivative(y):
    """Derivative of the sigmoid expressed through its output ``y``."""
    return y * (1.0 - y)


@dataclass(frozen=True)
class MLP:
    weights: tuple
    biases: tuple
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if self.output_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.output_activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ConfigurationError(f"layer {k} expects {w.shape[1]} inputs, "
                                         f"previous layer gives {self.weights[k - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DivergenceError(f"non-finite parameters in layer {k}")

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_parameters(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameter_vector(self):
        """Weights then biases of each layer, row-major, concatenated."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                               zip(self.weights, self.biases)])

    @classmethod
    def from_vector(cls, layer_sizes, vector, output_activation="sigmoid"):
        vector = np.asarray(vector, dtype=float)
        need = sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))
        if vector.size != need:
            raise ConfigurationError(f"expected {need} parameters, got {vector.size}")
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(vector[pos:pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(vector[pos:pos + n_out].copy())
            pos += n_out
        return cls(tuple(weights), tuple(biases), output_activation)

    def equals(self, other):
        """Exact (bitwise for finite values) parameter equality."""
        return (self.layer_sizes == other.layer_sizes
                and self.output_activation == other.output_activation
                and np.array_equal(self.parameter_vector(), other.parameter_vector()))


class ForwardPass(NamedTuple):
    output: np.ndarray
    preactivations: tuple  # v of every layer
    activations: tuple  # input followed by y of every layer


class Gradients(NamedTuple):
    weights: tuple
    biases: tuple


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 1000
    seed: int = 0
    init_scale: float = 0.5
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.init_scale < 0:
            raise ConfigurationError(f"init_scale must be non-negative, got {self.init_scale}")


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    relative_errors: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def init_weights(layer_sizes, config, output_activation="sigmoid"):
    """Uniform(-a, a) weights and biases from ``default_rng(config.seed)``."""
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ConfigurationError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(config.seed)
    a = config.init_scale
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.uniform(-a, a, size=(n_out, n_in)) if a else np.zeros((n_out, n_in)))
        biases.append(rng.uniform(-a, a, size=n_out) if a else np.zeros(n_out))
    return MLP(tuple(weights), tuple(biases), output_activation)


def forward(net, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (net.layer_sizes[0],):
        raise ConfigurationError(f"input has shape {x.shape}, network expects "
                                 f"({net.layer_sizes[0]},)")
    pre, act = [], [x]
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        v = w @ act[-1] + b
        pre.append(v)
        if k == last and net.output_activation == "identity":
            act.append(v)
        else:
            act.append(sigmoid(v))
    return ForwardPass(act[-1], tuple(pre), tuple(act))


def predict(net, x):
    return forward(net, x).output


def loss(net, x, target):
    """Half squared error ``0.5 * ||y - target||^2`` of one sample."""
    err = forward(net, x).output - np.asarray(target, dtype=float)
    return 0.5 * float(err @ err)


def backprop_grad(net, x, output_error_signal, cache=None):
    """Reverse-mode gradient given ``dL/dy`` of the network output.

    With ``output_error_signal = y - target`` this is the exact gradient of
    :func:`loss`.  ``cache`` may hold a :class:`ForwardPass` for ``x``.
    """
    fp = cache if cache is not None else forward(net, x)
    delta = np.asarray(output_error_signal, dtype=float)
    if delta.shape != fp.output.shape:
        raise ConfigurationError(f"error signal shape {delta.shape} != output {fp.output.shape}")
    n_layers = len(net.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1 or net.output_activation == "sigmoid":
            delta = delta * sigmoid_derivative(fp.activations[k + 1])
        gw[k] = np.outer(delta, fp.activations[k])
        gb[k] = delta
        if k:
            delta = net.weights[k].T @ delta
    return Gradients(tuple(gw), tuple(gb))


def sgd_update(net, grads, learning_rate):
    """Return ``net`` with every parameter moved by ``-learning_rate * grad``."""
    if not learning_rate >= 0:
        raise ConfigurationError(f"learning_rate must be non-negative, got {learning_rate}")
    weights = tuple(w - learning_rate * g for w, g in zip(net.weights, grads.weights))
    biases = tuple(b - learning_rate * g for b, g in zip(net.biases, grads.biases))
    return MLP(weights, biases, net.output_activation)


def train_supervised(net, dataset, config):
    """Per-sample SGD on the half squared error.

    The loss series holds, for each epoch, the mean squared error of the
    samples as seen just before their own update.  Sample order is
    reshuffled every epoch from ``default_rng(config.seed)`` when
    ``config.shuffle`` is set.
    """
    if not len(dataset):
        raise ConfigurationError("dataset is empty")
    xs = [np.asarray(x, dtype=float) for x, _ in dataset]
    ts = [np.asarray(t, dtype=float).reshape(-1) for _, t in dataset]
    for x, t in zip(xs, ts):
        if x.shape != (net.layer_sizes[0],) or t.shape != (net.layer_sizes[-1],):
            raise ConfigurationError(f"sample shapes {x.shape} -> {t.shape} do not fit "
                                     f"layer sizes {net.layer_sizes}")
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    # work on private copies; same arithmetic as forward/backprop_grad/sgd_update
    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    n_layers = len(weights)
    identity_out = net.output_activation == "identity"
    order = np.arange(len(xs))
    losses = np.empty(config.epochs)
    for epoch in range(config.epochs):
        if config.shuffle:
            order = rng.permutation(len(xs))
        total = 0.0
        for i in order:
            act = [xs[i]]
            for k in range(n_layers):
                v = weights[k] @ act[-1] + biases[k]
                act.append(v if (identity_out and k == n_layers - 1) else sigmoid(v))
            delta = act[-1] - ts[i]
            total += float(delta @ delta) / delta.size
            for k in range(n_layers - 1, -1, -1):
                if k < n_layers - 1 or not identity_out:
                    delta = delta * sigmoid_derivative(act[k + 1])
                back = weights[k].T @ delta if k else None
                weights[k] = weights[k] - lr * np.outer(delta, act[k])
                biases[k] = biases[k] - lr * delta
                delta = back
        losses[epoch] = total / len(xs)
        if not np.isfinite(losses[epoch]):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", step=epoch)
    return MLP(tuple(weights), tuple(biases), net.output_activation), losses


def mean_squared_error(net, dataset):
    errs = [forward(net, x).output - np.asarray(t, dtype=float).reshape(-1) for x, t in dataset]
    return float(np.mean([e @ e / e.size for e in errs]))


def _forward_extended(layer_sizes, theta, activation, x):
    """Forward pass in ``np.longdouble`` on a flat parameter vector."""
    a = np.asarray(x, dtype=np.longdouble)
    pos = 0
    last = len(layer_sizes) - 2
    for k, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        w = theta[pos:pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        v = w @ a + theta[pos:pos + n_out]
        pos += n_out
        a = v if (k == last and activation == "identity") else 1 / (1 + np.exp(-v))
    return a


def gradient_check(net, x, target, eps=1e-5, floor=1e-6):
    """Compare :func:`backprop_grad` with central differences of :func:`loss`.

    The perturbed forward passes run in extended precision (``np.longdouble``)
    so the finite-difference side is not limited by double round-off, which at
    ``eps=1e-5`` is of the order of 1e-6 relative on nets with large outputs.
    Relative error per parameter is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps near-zero gradients from reading as large relative errors.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    target = np.asarray(target, dtype=float)
    fp = forward(net, x)
    g = backprop_grad(net, x, fp.output - target, cache=fp)
    analytic = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in
                               zip(g.weights, g.biases)])
    theta = net.parameter_vector().astype(np.longdouble)
    t_ext = target.astype(np.longdouble)
    h = np.longdouble(eps)
    numeric = np.empty(theta.size)
    for i in range(theta.size):
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        yp = _forward_extended(net.layer_sizes, plus, net.output_activation, x)
        ym = _forward_extended(net.layer_sizes, minus, net.output_activation, x)
        # L(+) - L(-) = 0.5*(yp - ym).(yp + ym - 2t), without cancelling two losses
        numeric[i] = float(0.5 * np.dot(yp - ym, yp + ym - 2 * t_ext) / (2 * h))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return GradientCheckReport(float(rel.max()), rel, analytic, numeric)


class SigmoidMLPRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn regressor around :func:`train_supervised`.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Units per hidden (sigmoid) layer.
    output_activation : {"identity", "sigmoid"}
    learning_rate, epochs, init_scale, shuffle
        Forwarded to :class:`TrainConfig`.
    random_state : int
        Seed for initialisation and sample shuffling.
    """

    def __init__(self, hidden_layer_sizes=(8,), output_activation="identity",
                 learning_rate=0.1, epochs=500, init_scale=0.5, shuffle=True,
                 random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.output_activation = output_activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.init_scale = init_scale
        self.shuffle = shuffle
        self.random_state = random_state

    def _config(self, epochs=None):
        return TrainConfig(learning_rate=self.learning_rate,
                           epochs=self.epochs if epochs is None else epochs,
                           seed=self.random_state, init_scale=self.init_scale,
                           shuffle=self.shuffle)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        Y = y.reshape(len(y), -1)
        sizes = (X.shape[1],) + tuple(self.hidden_layer_sizes) + (Y.shape[1],)
        net = init_weights(sizes, self._config(), self.output_activation)
        self.net_, self.loss_curve_ = train_supervised(net, list(zip(X, Y)), self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def partial_fit(self, X, y):
        """One SGD epoch over ``(X, y)``, initialising the network on first call."""
        if not hasattr(self, "net_"):
            X2, y2 = check_X_y(X, y, multi_output=True, y_numeric=True)
            Y = y2.reshape(len(y2), -1)
            sizes = (X2.shape[1],) + tuple(self.hidden_layer_sizes) + (Y.shape[1],)
            self.net_ = init_weights(sizes, self._config(), self.output_activation)
            self.loss_curve_ = np.empty(0)
            self.n_features_in_ = X2.shape[1]
            self._y_1d = y2.ndim == 1
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        Y = y.reshape(len(y), -1)
        self.net_, losses = train_supervised(self.net_, list(zip(X, Y)), self._config(epochs=1))
        self.loss_curve_ = np.concatenate([self.loss_curve_, losses])
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = np.array([forward(self.net_, row).output for row in X])
        return out[:, 0] if self._y_1d else out
