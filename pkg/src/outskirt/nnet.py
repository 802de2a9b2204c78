"""Dense feed-forward networks with hand-written reverse-mode gradients.

Only what the autoencoders, the fusion VAE and the MLP classifier need:
fully connected layers, four activations, MSE/BCE losses and SGD/Adam.
Everything runs in float64 so finite-difference checks stay meaningful.

A network caches the activations of its last ``forward`` call;
``backward`` consumes that cache and returns per-layer gradients together
with the gradient with respect to the network input, which lets callers
chain several networks into one computation graph by hand.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StateError, TrainingDiverged

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")
BCE_EPS = 1e-7


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "linear":
        return x
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(name, pre, out):
    """Derivative of the activation evaluated at ``pre`` (``out`` = f(pre))."""
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "tanh":
        return 1.0 - out * out
    if name == "linear":
        return np.ones_like(pre)
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


class DenseNet:
    """An ordered stack of dense layers.

    Parameters
    ----------
    layers : list of Layer
        Consecutive layers must chain (``layers[i].out_dim == layers[i+1].in_dim``).
    rng_seed : int
        Seed used to initialise the weights; kept for provenance.
    """

    def __init__(self, layers, rng_seed=0):
        if not layers:
            raise ConfigError("a DenseNet needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ConfigError(
                    f"layer {i} outputs {a.out_dim} values but layer {i + 1} "
                    f"expects {b.in_dim}"
                )
        self.layers = list(layers)
        self.rng_seed = int(rng_seed)
        self._cache = None

    @classmethod
    def build(cls, sizes, activations, seed=0):
        """Glorot-uniform initialised network.

        ``sizes`` lists the input size followed by every layer's output size;
        ``activations`` is a single name or one name per layer.
        """
        n_layers = len(sizes) - 1
        if n_layers < 1:
            raise ConfigError("sizes must contain at least an input and an output size")
        if isinstance(activations, str):
            activations = [activations] * n_layers
        if len(activations) != n_layers:
            raise ConfigError("one activation per layer is required")
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            if fan_in < 1 or fan_out < 1:
                raise ConfigError(f"layer sizes must be positive, got {sizes}")
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers, rng_seed=seed)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def shapes(self):
        return [(l.out_dim, l.in_dim) for l in self.layers]

    def __repr__(self):
        dims = " -> ".join(
            [str(self.in_dim)] + [f"{l.out_dim}({l.activation})" for l in self.layers]
        )
        return f"DenseNet({dims})"

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self):
        return copy.deepcopy(self)

    def forward(self, batch, cache=True):
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(
                f"expected input with {self.in_dim} columns, got shape {x.shape}"
            )
        steps = []
        for layer in self.layers:
            pre = x @ layer.weight.T + layer.bias
            out = activate(layer.activation, pre)
            steps.append((x, pre, out))
            x = out
        if cache:
            self._cache = steps
        return x

    __call__ = forward

    def backward(self, loss_grad):
        """Back-propagate ``d loss / d output``.

        Returns ``(grads, grad_input)`` where ``grads`` is a list of
        ``(dW, db)`` pairs mirroring ``layers``.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(loss_grad, dtype=np.float64)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            x, pre, out = self._cache[i]
            g = g * activation_grad(layer.activation, pre, out)
            grads[i] = (g.T @ x, g.sum(axis=0))
            g = g @ layer.weight
        return grads, g


def flatten_grads(grads):
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


# -- losses ----------------------------------------------------------------


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def mse_loss(pred, target):
    """Mean squared error over every element."""
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    pred, target = _check_pair(pred, target)
    return 2.0 * (pred - target) / pred.size


def bce_loss(pred, target):
    """Mean binary cross entropy; predictions are clamped to [1e-7, 1 - 1e-7]."""
    pred, target = _check_pair(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log1p(-p))))


def bce_grad(pred, target):
    pred, target = _check_pair(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    g = (p - target) / (p * (1.0 - p)) / pred.size
    # clamp is flat outside the interval
    g[(pred < BCE_EPS) | (pred > 1.0 - BCE_EPS)] = 0.0
    return g


LOSSES = {"mse": (mse_loss, mse_grad), "bce": (bce_loss, bce_grad)}


# -- optimisation ------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class SGD:
    def __init__(self, params, lr=1e-3):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params, cfg):
    if cfg.optimizer == "sgd":
        return SGD(params, lr=cfg.learning_rate)
    return Adam(params, lr=cfg.learning_rate)


def train_step(net, batch, target, loss="mse", cfg=None, optimizer=None):
    """One gradient step on ``(batch, target)``; returns ``(net, loss_value)``.

    ``optimizer`` carries state (Adam moments) between calls; when omitted a
    fresh one is built from ``cfg``.
    """
    cfg = cfg or TrainConfig()
    loss_fn, grad_fn = LOSSES[loss]
    pred = net.forward(batch)
    value = loss_fn(pred, target)
    if not math.isfinite(value):
        raise TrainingDiverged(0, 0, [value])
    grads, _ = net.backward(grad_fn(pred, target))
    if optimizer is None:
        optimizer = make_optimizer(net.parameters(), cfg)
    optimizer.step(flatten_grads(grads))
    return net, value


def fit(net, inputs, targets, loss="mse", cfg=None):
    """Mini-batch training; returns the per-epoch mean loss history.

    Raises TrainingDiverged (with epoch, batch index and loss history) as soon
    as a batch loss stops being finite.
    """
    cfg = cfg or TrainConfig()
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) != len(targets):
        raise ConfigError("inputs and targets must have the same number of rows")
    loss_fn, grad_fn = LOSSES[loss]
    opt = make_optimizer(net.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(inputs)
    history, batch_losses = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            pred = net.forward(inputs[idx])
            value = loss_fn(pred, targets[idx])
            batch_losses.append(value)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, batch_losses)
            grads, _ = net.backward(grad_fn(pred, targets[idx]))
            opt.step(flatten_grads(grads))
            total += value * len(idx)
        history.append(total / n)
    return history
