"""A grouped 3x3 convolution is the same function as 32 separate branches.

Builds one VDSR-ResNeXt block (64 -> 128 -> 64, cardinality 32), reslices its
weights into an explicit branch-sum construction and compares outputs.
"""

import time

import numpy as np

from srforge.models import branch_block_from_grouped, build_block, count_parameters
from srforge.nn import init_parameters


def main():
    block = build_block(64, 128, 32, 3, with_bias=True)
    init_parameters(block, 0)
    branches = branch_block_from_grouped(block)
    rng = np.random.default_rng(0)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        x = rng.random((1, 64, 8, 8)).astype(np.float32)
        worst = max(worst, float(np.max(np.abs(block(x) - branches(x)))))
    dt = time.perf_counter() - t0
    print(f"100 inputs: max |grouped - branches| = {worst:.2e} ({dt:.1f} s)")
    print(f"parameters: grouped {count_parameters(block):,}  branches {count_parameters(branches):,}")


if __name__ == "__main__":
    main()
