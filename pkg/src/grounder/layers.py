"""Per-pixel dense stacks (1x1 convolutions) with hand-written backprop.

A stack is a list of :class:`Dense` layers applied to rows of a 2-d array;
feature maps are flattened to ``(H*W, C)`` by the caller.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numerics import sigmoid

ACTIVATIONS = ("relu", "sigmoid", "identity")


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("weight/bias shapes disagree")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


def init_stack(rng, dims, activations, dtype=np.float32):
    """Glorot-uniform weights, zero biases."""
    if len(activations) != len(dims) - 1:
        raise ConfigurationError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        layers.append(Dense(w, np.zeros(fan_out, dtype=dtype), act))
    return layers


def check_chain(layers):
    for a, b in zip(layers[:-1], layers[1:]):
        if a.out_dim != b.in_dim:
            raise DimensionError(f"layer chain broken: {a.out_dim} -> {b.in_dim}")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def forward(layers, x, keep=False):
    """Apply the stack to rows of ``x``. With ``keep`` also return the cache."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != layers[0].in_dim:
        raise DimensionError(f"input has {a.shape[-1]} channels, layer expects {layers[0].in_dim}")
    cache = []
    for layer in layers:
        z = a @ layer.weight.T.astype(np.float64) + layer.bias.astype(np.float64)
        out = _act(layer.activation, z)
        if keep:
            cache.append((a, out))
        a = out
    return (a, cache) if keep else a


def backward(layers, cache, grad_out):
    """Gradients for every layer plus the gradient w.r.t. the stack input.

    Returns ``([(dW, db), ...], dx)``.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        a_in, out = cache[i]
        if layer.activation == "relu":
            g = g * (out > 0)
        elif layer.activation == "sigmoid":
            g = g * out * (1.0 - out)
        a2 = a_in.reshape(-1, a_in.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        grads[i] = (g2.T @ a2, g2.sum(axis=0))
        g = g @ layer.weight.astype(np.float64)
    return grads, g


def stack_arrays(prefix, layers):
    out = {}
    for i, layer in enumerate(layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


def stack_meta(layers):
    return [layer.activation for layer in layers]


def stack_from_arrays(prefix, arrays, activations):
    return [Dense(np.asarray(arrays[f"{prefix}.{i}.weight"], dtype=np.float32),
                  np.asarray(arrays[f"{prefix}.{i}.bias"], dtype=np.float32), act)
            for i, act in enumerate(activations)]
