"""srforge: super-resolution with VDSR-ResNeXt and SRCGAN, built on NumPy.

Modules
-------
tensor     grouped convolution and elementwise kernels on NCHW arrays
nn         layers with forward/backward, Sequential container, initialisation
optim      SGD (momentum, weight decay, clipping), Adam, LR staircase
models     VDSR / VDSR-ResNeXt builders, parameter counting
pipeline   image IO, YCbCr, bicubic resampling, patch datasets, MNIST IDX
metrics    PSNR, SSIM, benchmark evaluation
srcgan     conditional GAN, baseline GAN and digit classifier
checkpoint binary checkpoint format
"""

from .models import ModelConfig, build_vdsr_baseline, build_vdsr_resnext, count_parameters
from .tensor import ConvSpec, conv2d_backward, conv2d_forward, mse_loss

__version__ = "0.1.0"

__all__ = [
    "ConvSpec",
    "ModelConfig",
    "build_vdsr_baseline",
    "build_vdsr_resnext",
    "conv2d_backward",
    "conv2d_forward",
    "count_parameters",
    "mse_loss",
]
