"""Layers with an explicit forward/backward contract, and a Sequential container.

Every layer keeps its parameters and gradient buffers in two dicts with
matching keys and shapes.  ``forward(x, train=True)`` caches whatever the
backward pass needs; ``backward(grad_out)`` fills the gradient buffers and
returns the gradient with respect to the layer input.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    DEFAULT_DTYPE,
    ConvSpec,
    NonFiniteError,
    ShapeError,
    check_finite,
    conv2d_backward,
    conv2d_forward,
)


class CacheError(RuntimeError):
    """backward() called without a matching train-mode forward()."""


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise CacheError(f"{self.kind}: backward without cached forward")
        cache, self._cache = self._cache, None
        return cache

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def astype(self, dtype):
        for name in self.params:
            self.params[name] = self.params[name].astype(dtype)
        self.zero_grad()
        return self

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, spec: ConvSpec, bias=True, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        self.params["weight"] = np.zeros(spec.weight_shape, dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(spec.out_channels, dtype=dtype)
        self.zero_grad()

    @property
    def fan_in(self):
        kh, kw = self.spec.kernel
        return (self.spec.in_channels // self.spec.groups) * kh * kw

    def forward(self, x, train=True):
        out = conv2d_forward(x, self.params["weight"], self.params.get("bias"), self.spec)
        if train:
            self._cache = x
        return out

    def backward(self, grad_out):
        x = self._pop_cache()
        gx, gw, gb = conv2d_backward(
            grad_out, x, self.params["weight"], self.spec, with_bias="bias" in self.params
        )
        self.grads["weight"] += gw
        if gb is not None:
            self.grads["bias"] += gb
        return gx

    def __repr__(self):
        s = self.spec
        return (
            f"Conv2d({s.in_channels}->{s.out_channels}, k={s.kernel}, stride={s.stride}, "
            f"pad={s.padding}, groups={s.groups}, bias={'bias' in self.params})"
        )


class Dense(Layer):
    """Fully connected layer on ``(n, features, 1, 1)`` tensors."""

    kind = "dense"

    def __init__(self, in_features, out_features, bias=True, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = np.zeros((out_features, in_features), dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    @property
    def fan_in(self):
        return self.in_features

    def forward(self, x, train=True):
        if x.shape[1:] != (self.in_features, 1, 1):
            raise ShapeError(f"dense expects (n, {self.in_features}, 1, 1), got {x.shape}")
        flat = x.reshape(x.shape[0], -1).astype(np.float64)
        out = flat @ self.params["weight"].T.astype(np.float64)
        if "bias" in self.params:
            out += self.params["bias"]
        if train:
            self._cache = x
        return check_finite(out.astype(x.dtype).reshape(x.shape[0], -1, 1, 1), "dense output")

    def backward(self, grad_out):
        x = self._pop_cache()
        g = grad_out.reshape(grad_out.shape[0], -1).astype(np.float64)
        flat = x.reshape(x.shape[0], -1).astype(np.float64)
        self.grads["weight"] += (g.T @ flat).astype(x.dtype)
        if "bias" in self.params:
            self.grads["bias"] += g.sum(axis=0).astype(x.dtype)
        gx = g @ self.params["weight"].astype(np.float64)
        return gx.astype(x.dtype).reshape(x.shape)

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features}, bias={'bias' in self.params})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        mask = x > 0
        if train:
            self._cache = mask
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, grad_out):
        return np.where(self._pop_cache(), grad_out, grad_out.dtype.type(0))


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, alpha=0.2):
        super().__init__()
        self.alpha = alpha

    def forward(self, x, train=True):
        slope = np.where(x > 0, x.dtype.type(1), x.dtype.type(self.alpha))
        if train:
            self._cache = slope
        return x * slope

    def backward(self, grad_out):
        return grad_out * self._pop_cache()

    def __repr__(self):
        return f"LeakyReLU(alpha={self.alpha})"


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=True):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
        if train:
            self._cache = out
        return out

    def backward(self, grad_out):
        y = self._pop_cache()
        return grad_out * y * (1 - y)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1, 1, 1)

    def backward(self, grad_out):
        return grad_out.reshape(self._pop_cache())


class Upsample(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    kind = "upsample"

    def __init__(self, factor=2):
        super().__init__()
        self.factor = factor

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        f = self.factor
        return x.repeat(f, axis=2).repeat(f, axis=3)

    def backward(self, grad_out):
        n, c, h, w = self._pop_cache()
        f = self.factor
        return grad_out.reshape(n, c, h, f, w, f).sum(axis=(3, 5))

    def __repr__(self):
        return f"Upsample(x{self.factor})"


class Sequential(Layer):
    """Ordered stack of layers with an optional global skip (``y = x + net(x)``)."""

    kind = "sequential"

    def __init__(self, layers=(), residual=False):
        super().__init__()
        self.layers = list(layers)
        self.residual = residual

    # parameters are owned by the child layers; expose them under dotted names
    def named_parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            prefix = f"{i}."
            if isinstance(layer, (Sequential, BranchSum)):
                for k, v in layer.named_parameters().items():
                    out[prefix + k] = v
            else:
                for k, v in layer.params.items():
                    out[prefix + k] = v
        return out

    def named_grads(self):
        out = {}
        for i, layer in enumerate(self.layers):
            prefix = f"{i}."
            if isinstance(layer, (Sequential, BranchSum)):
                for k, v in layer.named_grads().items():
                    out[prefix + k] = v
            else:
                for k, v in layer.grads.items():
                    out[prefix + k] = v
        return out

    def set_parameter(self, name, value):
        head, _, rest = name.partition(".")
        layer = self.layers[int(head)]
        if isinstance(layer, (Sequential, BranchSum)):
            layer.set_parameter(rest, value)
        else:
            if rest not in layer.params:
                raise KeyError(name)
            if layer.params[rest].shape != value.shape:
                raise ShapeError(f"{name}: shape {value.shape} != {layer.params[rest].shape}")
            layer.params[rest][...] = value

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def forward(self, x, train=True):
        out = x
        for i, layer in enumerate(self.layers):
            try:
                out = layer.forward(out, train)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer!r}): {e}") from None
        if self.residual and self.layers:
            # an empty residual stack predicts r = 0, so it is the identity
            if out.shape != x.shape:
                raise ShapeError(f"residual net output {out.shape} != input {x.shape}")
            out = out + x
        if train:
            self._cache = True
        return check_finite(out, "network output")

    def backward(self, grad_out):
        self._pop_cache()
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
        if self.residual and self.layers:
            g = g + grad_out
        return g

    def __call__(self, x, train=False):
        return self.forward(x, train)

    def __repr__(self):
        inner = "\n".join(f"  ({i}) {layer!r}" for i, layer in enumerate(self.layers))
        return f"Sequential(residual={self.residual})[\n{inner}\n]"


class BranchSum(Layer):
    """Run several sub-networks on the same input and sum their outputs."""

    kind = "branch_sum"

    def __init__(self, branches):
        super().__init__()
        self.branches = list(branches)

    named_parameters = Sequential.named_parameters
    named_grads = Sequential.named_grads
    set_parameter = Sequential.set_parameter

    @property
    def layers(self):
        return self.branches

    def zero_grad(self):
        for b in self.branches:
            b.zero_grad()

    def astype(self, dtype):
        for b in self.branches:
            b.astype(dtype)
        return self

    def forward(self, x, train=True):
        outs = [b.forward(x, train) for b in self.branches]
        total = outs[0].astype(np.float64)
        for o in outs[1:]:
            total = total + o
        if train:
            self._cache = True
        return total.astype(x.dtype)

    def backward(self, grad_out):
        self._pop_cache()
        grads = [b.backward(grad_out) for b in self.branches]
        return np.sum(grads, axis=0)


def parameter_layers(net):
    """Yield every leaf layer that owns parameters, depth first."""
    for layer in net.layers:
        if isinstance(layer, (Sequential, BranchSum)):
            yield from parameter_layers(layer)
        elif layer.params:
            yield layer


def init_parameters(net, seed: int) -> None:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    for layer in parameter_layers(net):
        w = layer.params["weight"]
        std = np.sqrt(2.0 / layer.fan_in)
        w[...] = rng.standard_normal(w.shape) * std
        if "bias" in layer.params:
            layer.params["bias"][...] = 0
    net.zero_grad()


def forward(net: Sequential, x, mode="train"):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return net.forward(x, train=(mode == "train"))


def backward(net: Sequential, grad_out):
    return net.backward(grad_out)


__all__ = [
    "BranchSum",
    "CacheError",
    "Conv2d",
    "Dense",
    "Flatten",
    "Layer",
    "LeakyReLU",
    "NonFiniteError",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "Upsample",
    "backward",
    "forward",
    "init_parameters",
    "parameter_layers",
]
