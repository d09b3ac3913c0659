"""Bias-free homogeneous ReLU architectures.

A net is an ordered stack of Linear / Conv2d / ReLU / MaxPool / Flatten
layers with all parameters held in one flat float64 vector. With L weight
layers the logits satisfy f(alpha * theta) = alpha^L * f(theta) for alpha > 0.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import numlin
from .errors import InvalidInput, ShapeMismatch
from .numlin import Rng, log_sum_exp, stable_softmax


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int

    @property
    def param_shape(self):
        return (self.out_features, self.in_features)

    @property
    def fan_in(self):
        return self.in_features


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0

    @property
    def param_shape(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def fan_in(self):
        return self.in_channels * self.kernel * self.kernel


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    k: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class HomogeneousNet:
    layers: tuple
    L: int                      # number of weight layers (homogeneity degree)
    theta: np.ndarray           # flat float64 parameter vector, length P
    layout: tuple               # per layer: (offset, shape) or None
    input_shape: tuple          # without the batch dimension
    K: int

    @property
    def P(self):
        return self.theta.size

    def param(self, layer_index):
        ent = self.layout[layer_index]
        if ent is None:
            return None
        off, shape = ent
        return self.theta[off:off + int(np.prod(shape))].reshape(shape)

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ShapeMismatch("theta length mismatch")
        return replace(self, theta=theta)


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    y: np.ndarray
    K: int

    def __post_init__(self):
        if len(self.y) < 1:
            raise InvalidInput("empty batch")
        if np.any(self.y < 0) or np.any(self.y >= self.K):
            raise InvalidInput("labels out of range")


@dataclass(frozen=True)
class SoftmaxBatch:
    p: np.ndarray               # B x K probabilities
    T: float


def _mlp_layers(dims):
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(Linear(a, b))
        if i < len(dims) - 2:
            layers.append(ReLU())
    return layers


def _arch_layers(arch_name, input_shape, K):
    if arch_name in ("mlp-300-100", "mlp-small"):
        n_in = int(np.prod(input_shape))
        dims = [n_in, 300, 100, K] if arch_name == "mlp-300-100" else \
            [n_in, 32, 16, K]
        return _mlp_layers(dims)
    if arch_name == "lenet5":
        c, h, w = input_shape
        h1, w1 = (h - 4) // 2, (w - 4) // 2        # conv5 then pool2
        h2, w2 = (h1 - 4) // 2, (w1 - 4) // 2
        flat = 16 * h2 * w2
        return [
            Conv2d(c, 6, 5), ReLU(), MaxPool(2),
            Conv2d(6, 16, 5), ReLU(), MaxPool(2),
            Flatten(),
            Linear(flat, 120), ReLU(),
            Linear(120, 84), ReLU(),
            Linear(84, K),
        ]
    if arch_name == "cnn-small":
        c, h, w = input_shape
        flat = 8 * (h // 4) * (w // 4)             # two pad-1 convs + two pool2
        return [
            Conv2d(c, 4, 3, pad=1), ReLU(), MaxPool(2),
            Conv2d(4, 8, 3, pad=1), ReLU(), MaxPool(2),
            Flatten(),
            Linear(flat, 32), ReLU(),
            Linear(32, K),
        ]
    raise InvalidInput(f"unknown architecture {arch_name!r}")


ARCH_NAMES = ("mlp-300-100", "mlp-small", "lenet5", "cnn-small")


def net_from_layers(layers, input_shape, K, init_seed):
    """Assemble a net from a layer list with Kaiming-normal init."""
    layers = tuple(layers)
    rng = Rng(init_seed)
    layout = []
    chunks = []
    offset = 0
    n_weight = 0
    for i, layer in enumerate(layers):
        if isinstance(layer, (Linear, Conv2d)):
            shape = layer.param_shape
            std = np.sqrt(2.0 / layer.fan_in)
            w = std * rng.split(i).normal(size=shape)
            chunks.append(w.ravel())
            layout.append((offset, shape))
            offset += w.size
            n_weight += 1
        else:
            layout.append(None)
    theta = np.concatenate(chunks) if chunks else np.zeros(0)
    return HomogeneousNet(layers, n_weight, theta, tuple(layout),
                          tuple(input_shape), K)


def build_net(arch_name, input_shape, K, init_seed):
    """Create a named bias-free architecture with Kaiming-normal weights."""
    return net_from_layers(_arch_layers(arch_name, input_shape, K),
                           input_shape, K, init_seed)


def make_mlp(dims, K=None, init_seed=0):
    """Plain bias-free ReLU MLP with the given layer widths (test helper)."""
    K = dims[-1] if K is None else K
    return net_from_layers(_mlp_layers(dims), (dims[0],), K, init_seed)


def scale_params(net, alpha):
    """theta -> alpha * theta; logits scale by alpha^L."""
    if alpha <= 0:
        raise InvalidInput(f"alpha must be positive, got {alpha}")
    return net.with_theta(net.theta * float(alpha))


def forward(net, X, want_acts=False):
    """Evaluate logits; optionally return all intermediate activations.

    acts[i] is the input of layer i; acts[-1] holds the logits. MaxPool
    layers additionally cache their argmax index arrays in the pool_idx dict.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != net.input_shape:
        raise ShapeMismatch(
            f"input shape {X.shape[1:]} != expected {net.input_shape}")
    a = X
    acts = [a]
    pool_idx = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Linear):
            a = a @ net.param(i).T
        elif isinstance(layer, Conv2d):
            a = numlin.conv2d_forward(a, net.param(i), layer.stride, layer.pad)
        elif isinstance(layer, ReLU):
            a = np.maximum(a, 0.0)
        elif isinstance(layer, MaxPool):
            a, idx = numlin.maxpool2d_forward(a, layer.k)
            pool_idx[i] = idx
        elif isinstance(layer, Flatten):
            a = a.reshape(a.shape[0], -1)
        else:  # pragma: no cover
            raise InvalidInput(f"unknown layer {layer!r}")
        acts.append(a)
    if want_acts:
        return a, acts, pool_idx
    return a


def forward_logits(net, X):
    """B x K logit matrix."""
    return forward(net, X)


def cross_entropy(logits, y, T=1.0):
    """Mean softmax cross-entropy at temperature T, computed stably.

    Per-sample loss is lse(z, T)/T - z_y/T == -log p_y; finite even when
    p_y underflows in direct evaluation. Returns (mean loss, SoftmaxBatch).
    """
    if T <= 0:
        raise InvalidInput(f"temperature must be positive, got {T}")
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    lse = log_sum_exp(logits, T)
    zy = logits[np.arange(len(y)), y]
    loss = float(np.mean(lse / T - zy / T))
    return loss, SoftmaxBatch(stable_softmax(logits, T), T)


def confidence_stats(sb):
    """(mean entropy in nats, Qhat column-mean prediction) of a SoftmaxBatch."""
    p = sb.p
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(p), 0.0)
    mean_entropy = float(np.mean(-plogp.sum(axis=1)))
    qhat = p.mean(axis=0)
    return mean_entropy, qhat
