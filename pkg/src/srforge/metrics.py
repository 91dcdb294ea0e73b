"""PSNR / SSIM scoring and benchmark evaluation of SR models on luma."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import crop_to_multiple, degrade, list_images, luma, read_image

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _shaved(a, b, shave):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    if shave < 0:
        raise ValueError("shave must be >= 0")
    if shave:
        if 2 * shave >= min(a.shape[:2]):
            raise ValueError(f"shave {shave} leaves nothing of a {a.shape} image")
        a = a[shave:-shave, shave:-shave]
        b = b[shave:-shave, shave:-shave]
    return a, b


def psnr(a, b, peak: float = 255.0, shave: int = 0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _shaved(a, b, shave)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return g


def _filter_valid(img, g):
    k = len(g)
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=0)
    rows = win @ g
    win = np.lib.stride_tricks.sliding_window_view(rows, k, axis=1)
    return win @ g


def ssim_map(a, b, peak: float = 255.0):
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a**2
    s_bb = _filter_valid(b * b, g) - mu_b**2
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    return num / den


def ssim(a, b, peak: float = 255.0, shave: int = 0) -> float:
    """Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03)."""
    a, b = _shaved(a, b, shave)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean(ssim_map(a, b, peak)))


# ---------------------------------------------------------------- evaluation


@dataclass
class ImageScore:
    image: str
    psnr_db: float
    ssim: float
    bicubic_psnr_db: float
    bicubic_ssim: float


@dataclass
class EvalReport:
    dataset: str
    scale: int
    shave: int
    quantize: bool
    rows: list = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    @property
    def mean_bicubic_psnr(self) -> float:
        return float(np.mean([r.bicubic_psnr_db for r in self.rows]))

    @property
    def mean_bicubic_ssim(self) -> float:
        return float(np.mean([r.bicubic_ssim for r in self.rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            f"# dataset={self.dataset} scale={self.scale} shave={self.shave} "
            f"quantize={int(self.quantize)}\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "psnr_db", "ssim", "bicubic_psnr_db", "bicubic_ssim"])
        for r in sorted(self.rows, key=lambda r: r.image):
            w.writerow([r.image, f"{r.psnr_db:.6f}", f"{r.ssim:.6f}", f"{r.bicubic_psnr_db:.6f}", f"{r.bicubic_ssim:.6f}"])
        w.writerow(
            [
                "MEAN",
                f"{self.mean_psnr:.6f}",
                f"{self.mean_ssim:.6f}",
                f"{self.mean_bicubic_psnr:.6f}",
                f"{self.mean_bicubic_ssim:.6f}",
            ]
        )
        return buf.getvalue()


def predict_plane(model, plane: np.ndarray, tile: int = 96, halo: int | None = None) -> np.ndarray:
    """Run a fully convolutional model over a 2-D plane, tile by tile.

    Each tile is extended by ``halo`` pixels of real context on every side
    (defaulting to the receptive-field radius) so the stitched result does
    not depend on the tiling.
    """
    if model is None:
        return plane.astype(np.float32)
    if halo is None:
        from .models import conv_layers

        halo = sum(layer.spec.kernel[0] // 2 for layer in conv_layers(model))
    h, w = plane.shape
    x = plane.astype(np.float32)
    out = np.empty_like(x)
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            ya, xa = max(0, y0 - halo), max(0, x0 - halo)
            yb, xb = min(h, y1 + halo), min(w, x1 + halo)
            pred = model.forward(x[None, None, ya:yb, xa:xb], train=False)[0, 0]
            out[y0:y1, x0:x1] = pred[y0 - ya : y1 - ya, x0 - xa : x1 - xa]
    return out


def _to_code_values(plane, quantize):
    v = np.clip(plane.astype(np.float64), 0.0, 1.0) * 255.0
    return np.round(v) if quantize else v


def evaluate_sr(model, dataset_dir, scale: int, shave: int | None = None, quantize: bool = False, name=None) -> EvalReport:
    """Score ``model`` (``None`` = identity, i.e. plain bicubic) on every image in a directory.

    Scores are computed on luma in [0, 255] with ``shave`` border pixels
    removed (default: ``scale``).  The bicubic-baseline scores are recorded
    alongside.
    """
    shave = scale if shave is None else shave
    files = list_images(dataset_dir)
    report = EvalReport(name or Path(dataset_dir).name, scale, shave, quantize)
    for path in files:
        hr = crop_to_multiple(luma(read_image(path)), scale)
        lr = degrade(hr, scale).astype(np.float32)
        sr = predict_plane(model, lr)
        gt = hr * 255.0
        if quantize:
            gt = np.round(gt)
        sr_v = _to_code_values(sr, quantize)
        bic_v = _to_code_values(lr, quantize)
        report.rows.append(
            ImageScore(
                path.name,
                psnr(sr_v, gt, shave=shave),
                ssim(sr_v, gt, shave=shave),
                psnr(bic_v, gt, shave=shave),
                ssim(bic_v, gt, shave=shave),
            )
        )
    return report
