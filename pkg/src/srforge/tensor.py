"""Rank-4 NCHW array kernels: grouped convolution, elementwise ops, MSE.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)``.
float32 is the working precision; float64 is accepted everywhere so that
gradient checks can run in double precision.  Every public op validates its
output and raises :class:`NonFiniteError` on NaN/Inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf showed up at an op boundary."""


def check_finite(t: np.ndarray, where: str = "tensor") -> np.ndarray:
    if not np.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {where}")
    return t


def zeros(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def as_tensor(data, dtype=None) -> np.ndarray:
    """Coerce ``data`` to a contiguous rank-4 array."""
    arr = np.ascontiguousarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    if arr.ndim != 4:
        raise ShapeError(f"expected rank-4 (n, c, h, w) tensor, got shape {arr.shape}")
    return check_finite(arr)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        else:
            object.__setattr__(self, "kernel", tuple(self.kernel))
        for name in ("in_channels", "out_channels", "stride", "groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.padding < 0 or min(self.kernel) < 1:
            raise ValueError("padding must be >= 0 and kernel dims >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"input {h}x{w} too small for kernel {self.kernel}")
        return ho, wo


def _check_conv_operands(x: np.ndarray, weight: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank 4, got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != expected {spec.weight_shape}")


def _im2col(x: np.ndarray, spec: ConvSpec, ho: int, wo: int, dtype) -> np.ndarray:
    # -> (n, groups, cin_g*kh*kw, ho*wo)
    n, c, _, _ = x.shape
    kh, kw = spec.kernel
    p, s = spec.padding, spec.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + s * ho : s, j : j + s * wo : s]
    g = spec.groups
    return cols.reshape(n, g, (c // g) * kh * kw, ho * wo)


def _col2im(dcols: np.ndarray, x_shape, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    kh, kw = spec.kernel
    p, s = spec.padding, spec.stride
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, i, j]
    return dxp[:, :, p : p + h, p : p + w] if p else dxp


def conv2d_forward(x, weight, bias, spec: ConvSpec) -> np.ndarray:
    """Grouped 2-D cross-correlation.

    Output channel block ``k`` (of ``out_channels // groups`` channels) only
    sees input channel block ``k``.  Products are accumulated in float64 and
    the result is cast back to the input dtype.
    """
    _check_conv_operands(x, weight, spec)
    n, _, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    g = spec.groups
    cols = _im2col(x, spec, ho, wo, np.float64)
    wmat = weight.reshape(g, spec.out_channels // g, -1).astype(np.float64)
    out = np.matmul(wmat[None], cols)  # (n, g, cout_g, L)
    out = out.reshape(n, spec.out_channels, ho, wo)
    if bias is not None:
        if np.shape(bias) != (spec.out_channels,):
            raise ShapeError(f"bias shape {np.shape(bias)} != ({spec.out_channels},)")
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return check_finite(out.astype(x.dtype, copy=False), "conv2d output")


def conv2d_backward(grad_out, x, weight, spec: ConvSpec, with_bias: bool = True):
    """Gradients of a scalar loss through :func:`conv2d_forward`.

    Returns ``(grad_input, grad_weight, grad_bias)``; ``grad_bias`` is None
    when ``with_bias`` is false.
    """
    _check_conv_operands(x, weight, spec)
    n, _, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    if grad_out.shape != (n, spec.out_channels, ho, wo):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != forward output {(n, spec.out_channels, ho, wo)}"
        )
    g = spec.groups
    cout_g = spec.out_channels // g
    cols = _im2col(x, spec, ho, wo, np.float64)
    gout = grad_out.reshape(n, g, cout_g, ho * wo).astype(np.float64)
    wmat = weight.reshape(g, cout_g, -1).astype(np.float64)

    gw = np.matmul(gout, cols.transpose(0, 1, 3, 2)).sum(axis=0)  # (g, cout_g, K)
    grad_weight = gw.reshape(spec.weight_shape).astype(weight.dtype, copy=False)
    dcols = np.matmul(wmat.transpose(0, 2, 1)[None], gout)  # (n, g, K, L)
    grad_input = _col2im(dcols, x.shape, spec, ho, wo).astype(x.dtype, copy=False)
    grad_bias = None
    if with_bias:
        grad_bias = gout.sum(axis=(0, 3)).reshape(spec.out_channels).astype(x.dtype, copy=False)
    check_finite(grad_input, "conv2d grad_input")
    check_finite(grad_weight, "conv2d grad_weight")
    return grad_input, grad_weight, grad_bias


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _same_shape(a, b, "add")
    return check_finite(a + b, "add")


def sub(a, b):
    _same_shape(a, b, "sub")
    return check_finite(a - b, "sub")


def scale(t, k: float):
    return check_finite(t * t.dtype.type(k), "scale")


def clamp(t, lo: float, hi: float):
    if lo > hi:
        raise ValueError("clamp requires lo <= hi")
    return check_finite(np.clip(t, lo, hi), "clamp")


def mse_loss(pred, target):
    """Half mean squared error over every element of the batch.

    Returns ``(loss, grad)`` where ``loss = sum((target - pred)**2) / (2 N)``
    and ``grad`` is its derivative with respect to ``pred``.
    """
    _same_shape(pred, target, "mse_loss")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    loss = float(np.dot(diff.ravel(), diff.ravel()) / (2.0 * n))
    grad = (diff / n).astype(pred.dtype, copy=False)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return loss, check_finite(grad, "mse grad")
