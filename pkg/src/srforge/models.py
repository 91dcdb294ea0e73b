"""VDSR and VDSR-ResNeXt network builders, plus parameter counting.

A VDSR-ResNeXt block is three 3x3 convolutions: a dense ``base -> width``
conv, a grouped ``width -> width`` conv with ``cardinality`` groups, and a
dense ``width -> base`` conv, each followed by ReLU.  The same block can be
written as ``cardinality`` narrow branches whose outputs are summed; see
:func:`build_branch_block` and :func:`branch_block_from_grouped`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import BranchSum, Conv2d, ReLU, Sequential
from .tensor import ConvSpec


@dataclass(frozen=True)
class ModelConfig:
    depth_middle: int = 18
    block_width: int = 128
    cardinality: int = 32
    base_channels: int = 64
    kernel: int = 3
    with_bias: bool = True

    def __post_init__(self):
        if self.depth_middle < 0 or self.depth_middle % 3:
            raise ValueError(f"depth_middle must be a non-negative multiple of 3, got {self.depth_middle}")
        if self.block_width < 1 or self.cardinality < 1:
            raise ValueError("block_width and cardinality must be positive")
        if self.block_width % self.cardinality:
            raise ValueError(
                f"block_width {self.block_width} not divisible by cardinality {self.cardinality}"
            )
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd to preserve spatial size")

    @property
    def n_blocks(self) -> int:
        return self.depth_middle // 3

    @property
    def name(self) -> str:
        return f"VDSR-ResNeXt-{self.depth_middle}-{self.block_width}"

    def to_dict(self) -> dict:
        return asdict(self)


def _conv(cin, cout, k, groups=1, bias=True):
    return Conv2d(ConvSpec(cin, cout, (k, k), stride=1, padding=k // 2, groups=groups), bias=bias)


def build_block(base_channels=64, width=128, cardinality=32, kernel=3, with_bias=True, grouped=True):
    """One 3-layer block.  ``grouped=False`` gives the plain (no-branch) variant."""
    g = cardinality if grouped else 1
    return Sequential(
        [
            _conv(base_channels, width, kernel, 1, with_bias),
            ReLU(),
            _conv(width, width, kernel, g, with_bias),
            ReLU(),
            _conv(width, base_channels, kernel, 1, with_bias),
            ReLU(),
        ]
    )


def build_vdsr_resnext(cfg: ModelConfig) -> Sequential:
    """Input conv, ``depth_middle / 3`` blocks, output conv, global residual.

    The network maps a single-channel (luma) image ``x`` to ``x + r``, where
    ``r`` is what the convolutional stack predicts.
    """
    c, k, b = cfg.base_channels, cfg.kernel, cfg.with_bias
    layers = [_conv(1, c, k, 1, b), ReLU()]
    for _ in range(cfg.n_blocks):
        layers.extend(build_block(c, cfg.block_width, cfg.cardinality, k, b).layers)
    layers.append(_conv(c, 1, k, 1, b))
    return Sequential(layers, residual=True)


def build_vdsr_baseline(depth: int = 18, with_bias: bool = True, channels: int = 64, kernel: int = 3) -> Sequential:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    layers = [_conv(1, channels, kernel, 1, with_bias), ReLU()]
    for _ in range(depth):
        layers += [_conv(channels, channels, kernel, 1, with_bias), ReLU()]
    layers.append(_conv(channels, 1, kernel, 1, with_bias))
    return Sequential(layers, residual=True)


def conv_layers(net):
    from .nn import parameter_layers

    return [layer for layer in parameter_layers(net) if isinstance(layer, Conv2d)]


def count_parameters(net, include_bias: bool = True) -> int:
    total = 0
    for name, p in net.named_parameters().items():
        if not include_bias and name.endswith("bias"):
            continue
        total += int(p.size)
    return total


def build_branch_block(base_channels=64, width=128, cardinality=32, kernel=3, with_bias=True):
    """The explicit multi-branch form: ``cardinality`` stacks of
    ``base -> d -> d -> base`` convs (``d = width / cardinality``) summed, then ReLU.

    Only branch 0 carries a bias on its last conv, so that the summed output
    has exactly one bias term per channel like the grouped form.
    """
    d = width // cardinality
    branches = []
    for i in range(cardinality):
        branches.append(
            Sequential(
                [
                    _conv(base_channels, d, kernel, 1, with_bias),
                    ReLU(),
                    _conv(d, d, kernel, 1, with_bias),
                    ReLU(),
                    _conv(d, base_channels, kernel, 1, with_bias and i == 0),
                ]
            )
        )
    return Sequential([BranchSum(branches), ReLU()])


def branch_block_from_grouped(block: Sequential) -> Sequential:
    """Re-slice a grouped block's weights into the equivalent branch form."""
    first, mid, last = block.layers[0], block.layers[2], block.layers[4]
    base = first.spec.in_channels
    width = first.spec.out_channels
    card = mid.spec.groups
    k = first.spec.kernel[0]
    with_bias = "bias" in first.params
    d = width // card
    out = build_branch_block(base, width, card, k, with_bias).astype(first.params["weight"].dtype)
    for i, branch in enumerate(out.layers[0].branches):
        sl = slice(i * d, (i + 1) * d)
        c1, c2, c3 = branch.layers[0], branch.layers[2], branch.layers[4]
        c1.params["weight"][...] = first.params["weight"][sl]
        c2.params["weight"][...] = mid.params["weight"][sl]
        c3.params["weight"][...] = last.params["weight"][:, sl]
        if with_bias:
            c1.params["bias"][...] = first.params["bias"][sl]
            c2.params["bias"][...] = mid.params["bias"][sl]
            if i == 0:
                c3.params["bias"][...] = last.params["bias"]
    return out


def block_parameter_counts(width: int, cardinality: int = 32, base_channels: int = 64, kernel: int = 3):
    """``(plain, grouped)`` bias-free parameter counts of one block of the given width."""
    plain = count_parameters(build_block(base_channels, width, cardinality, kernel, False, grouped=False), False)
    grouped = count_parameters(build_block(base_channels, width, cardinality, kernel, False, grouped=True), False)
    return plain, grouped


def zero_parameters(net) -> None:
    for p in net.named_parameters().values():
        p[...] = 0


def residual_branch_output(net: Sequential, x: np.ndarray) -> np.ndarray:
    """Output of the conv stack alone, i.e. the predicted residual ``r``."""
    return Sequential(net.layers, residual=False).forward(x, train=False)
