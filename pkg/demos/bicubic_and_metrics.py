"""Bicubic baseline PSNR/SSIM on a few natural images at x2, x3 and x4.

Needs scikit-image for the sample photographs (``pip install srforge[samples]``).
"""

import tempfile
from pathlib import Path

from srforge.metrics import evaluate_sr
from srforge.sample_data import SKIMAGE_VAL, natural_images


def main():
    with tempfile.TemporaryDirectory() as tmp:
        natural_images(tmp, SKIMAGE_VAL)
        for scale in (2, 3, 4):
            report = evaluate_sr(None, Path(tmp), scale)
            print(f"x{scale}: bicubic PSNR {report.mean_bicubic_psnr:.2f} dB  SSIM {report.mean_bicubic_ssim:.4f}")
            for r in report.rows:
                print(f"    {r.image:<14} {r.bicubic_psnr_db:6.2f} dB  {r.bicubic_ssim:.4f}")


if __name__ == "__main__":
    main()
