import numpy as np
import pytest

from srforge.models import (
    ModelConfig,
    branch_block_from_grouped,
    build_block,
    build_vdsr_baseline,
    build_vdsr_resnext,
    conv_layers,
    count_parameters,
    residual_branch_output,
    block_parameter_counts,
    zero_parameters,
)
from srforge.nn import init_parameters


def _block_formulas(width, card=32, base=64, k=3):
    # closed forms from the layer shapes, written out independently of the builders
    d = width // card
    plain = base * k * k * width + width * k * k * width + width * k * k * base
    grouped = card * (base * k * k * d + d * k * k * d + d * k * k * base)
    return plain, grouped


class TestBlockCounts:
    @pytest.mark.parametrize(
        "width,plain,grouped",
        [(64, 110_592, 74_880), (128, 294_912, 152_064), (256, 884_736, 313_344)],
    )
    def test_counts(self, width, plain, grouped):
        assert block_parameter_counts(width) == (plain, grouped)
        assert _block_formulas(width) == (plain, grouped)

    @pytest.mark.parametrize("width", [64, 128, 256])
    def test_grouped_saving_is_exact(self, width):
        plain, grouped = block_parameter_counts(width)
        block = build_block(64, width, 32, 3, with_bias=False)
        assert count_parameters(block, include_bias=False) == grouped
        assert plain - grouped == width * 9 * width - width * 9 * (width // 32)

    def test_bias_counted_separately(self):
        block = build_block(64, 128, 32, 3, with_bias=True)
        assert count_parameters(block, include_bias=True) - count_parameters(block, include_bias=False) == 128 + 128 + 64


class TestBuilders:
    def test_resnext_18_128_has_20_convs(self):
        net = build_vdsr_resnext(ModelConfig(18, 128, 32))
        convs = conv_layers(net)
        assert len(convs) == 20
        assert convs[0].spec.in_channels == 1 and convs[-1].spec.out_channels == 1
        groups = [c.spec.groups for c in convs[1:-1]]
        assert groups == [1, 32, 1] * 6
        assert net.residual

    def test_output_shape(self):
        net = build_vdsr_resnext(ModelConfig(18, 64, 32))
        init_parameters(net, 0)
        x = np.random.default_rng(0).random((1, 1, 41, 41)).astype(np.float32)
        assert net(x).shape == (1, 1, 41, 41)

    def test_zero_middle_is_identity(self, rng):
        net = build_vdsr_resnext(ModelConfig(9, 64, 32))
        zero_parameters(net)
        x = rng.random((2, 1, 17, 13)).astype(np.float32)
        np.testing.assert_array_equal(net(x), x)

    def test_baseline_depth18(self):
        net = build_vdsr_baseline(18, with_bias=False)
        convs = conv_layers(net)
        assert len(convs) == 20
        assert all(c.spec.in_channels == 64 and c.spec.out_channels == 64 for c in convs[1:-1])
        assert count_parameters(net, include_bias=False) == 18 * (64 * 9 * 64) + 9 * 64 + 64 * 9 == 664_704

    def test_baseline_depth0(self):
        convs = conv_layers(build_vdsr_baseline(0))
        assert len(convs) == 2

    @pytest.mark.parametrize(
        "kwargs",
        [dict(depth_middle=10), dict(block_width=100), dict(kernel=4), dict(cardinality=0)],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)

    def test_name(self):
        assert ModelConfig(18, 256).name == "VDSR-ResNeXt-18-256"


class TestEquivalence:
    def test_grouped_equals_branches_full_width(self, rng):
        block = build_block(64, 128, 32, 3, with_bias=True)
        init_parameters(block, 5)
        for layer in conv_layers(block):
            layer.params["bias"][...] = 0.01 * rng.standard_normal(layer.params["bias"].shape)
        branches = branch_block_from_grouped(block)
        x = rng.random((1, 64, 12, 12)).astype(np.float32)
        a = block(x)
        b = branches(x)
        assert np.max(np.abs(a - b)) < 1e-5
        assert count_parameters(branches, include_bias=False) == count_parameters(block, include_bias=False)

    def test_branch_gradients_match(self, rng):
        block = build_block(4, 4, 2, 3, with_bias=True).astype(np.float64)
        init_parameters(block, 1)
        branches = branch_block_from_grouped(block)
        x = rng.random((2, 4, 6, 6))
        g = rng.standard_normal((2, 4, 6, 6))
        block.forward(x)
        branches.forward(x)
        np.testing.assert_allclose(block.backward(g), branches.backward(g), atol=1e-12)

    def test_residual_contract(self, rng):
        net = build_vdsr_resnext(ModelConfig(3, 8, 2, base_channels=8))
        init_parameters(net, 3)
        x = rng.random((1, 1, 10, 10)).astype(np.float32)
        np.testing.assert_array_equal(net(x), residual_branch_output(net, x) + x)
