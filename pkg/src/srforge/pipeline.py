"""Image ingestion and dataset construction.

Covers decoding (PNG, binary PPM/PGM), BT.601 studio-swing YCbCr
conversion, bicubic resampling, 41x41 patch generation with dihedral
augmentation, a plain-text patch manifest, and MNIST IDX files.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm", ".bmp")

# BT.601 studio swing, inputs in [0, 1], outputs in [0, 255] code values
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
)
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


class DataError(Exception):
    """Unreadable or malformed input data."""


# ---------------------------------------------------------------- image IO


def read_image(path) -> np.ndarray:
    """Decode an 8-bit image to ``uint8`` of shape (h, w) or (h, w, 3)."""
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I", "1"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    return np.ascontiguousarray(arr)


def write_png(path, pixels) -> None:
    """Write a float image in [0, 1] or a uint8 array as PNG."""
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------- colour


def rgb_to_ycbcr(r, g, b):
    """BT.601 studio-swing conversion; inputs in [0, 1], outputs in code values.

    ``Y`` spans [16, 235] and ``Cb``/``Cr`` span [16, 240].
    """
    rgb = np.stack([np.asarray(r, np.float64), np.asarray(g, np.float64), np.asarray(b, np.float64)])
    if rgb.min(initial=0.0) < 0.0 or rgb.max(initial=0.0) > 1.0:
        raise ValueError("rgb_to_ycbcr expects inputs in [0, 1]")
    out = np.tensordot(_YCBCR_MATRIX, rgb, axes=1) + _YCBCR_OFFSET.reshape((3,) + (1,) * (rgb.ndim - 1))
    return out[0], out[1], out[2]


def ycbcr_to_rgb(y, cb, cr):
    """Inverse of :func:`rgb_to_ycbcr`.  Output is not clipped."""
    ycc = np.stack([np.asarray(y, np.float64), np.asarray(cb, np.float64), np.asarray(cr, np.float64)])
    ycc = ycc - _YCBCR_OFFSET.reshape((3,) + (1,) * (ycc.ndim - 1))
    out = np.tensordot(_YCBCR_INVERSE, ycc, axes=1)
    return out[0], out[1], out[2]


def luma(image: np.ndarray) -> np.ndarray:
    """Studio-swing Y of a uint8 image, divided by 255 (range [16/255, 235/255]).

    Grayscale input is treated as R = G = B.
    """
    x = image.astype(np.float64) / 255.0
    if x.ndim == 2:
        x = np.stack([x, x, x], axis=-1)
    y, _, _ = rgb_to_ycbcr(x[..., 0], x[..., 1], x[..., 2])
    return y / 255.0


# ---------------------------------------------------------------- bicubic


def cubic_kernel(t, a: float = -0.5):
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    return np.where(
        t <= 1,
        (a + 2) * t3 - (a + 3) * t2 + 1,
        np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0),
    )


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int, antialias: bool) -> np.ndarray:
    s = n_out / n_in
    aa = antialias and s < 1
    width = 4.0 / s if aa else 4.0
    x = (np.arange(n_out) + 0.5) / s - 0.5
    left = np.floor(x - width / 2).astype(int)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = x[:, None] - idx
    w = s * cubic_kernel(s * dist) if aa else cubic_kernel(dist)
    w = w / w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(m, (rows, np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    m.setflags(write=False)
    return m


def bicubic_resize(img, out_w: int, out_h: int, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resampling of a 2-D plane (float64 result).

    Pixel centres are aligned (``x_in = (x_out + 0.5) / s - 0.5``); when
    shrinking with ``antialias`` the kernel is stretched by ``1 / s``.
    Out-of-range taps are clamped to the border.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("target size must be positive")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"bicubic_resize expects a 2-D plane, got shape {img.shape}")
    h, w = img.shape
    mh = _resize_matrix(h, out_h, antialias)
    mw = _resize_matrix(w, out_w, antialias)
    return mh @ img @ mw.T


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic down by ``scale`` then back up: the network input for ``hr``.

    ``hr`` must already have dimensions divisible by ``scale``.
    """
    h, w = hr.shape
    small = bicubic_resize(hr, w // scale, h // scale, antialias=True)
    return bicubic_resize(small, w, h, antialias=True)


def crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


# ---------------------------------------------------------------- SR patches


def dihedral(img: np.ndarray, transform_id: int) -> np.ndarray:
    """Transform 0-3: rotations by 0/90/180/270 deg; 4-7: the same after a left-right flip."""
    if not 0 <= transform_id < 8:
        raise ValueError("transform id must be in 0..7")
    if transform_id >= 4:
        img = img[:, ::-1]
    return np.ascontiguousarray(np.rot90(img, transform_id % 4))


@dataclass(frozen=True)
class PatchRecord:
    source: str
    scale: int
    x: int
    y: int
    transform: int

    def to_line(self) -> str:
        return f"{self.source}\t{self.scale}\t{self.x}\t{self.y}\t{self.transform}"


@dataclass
class SamplePair:
    lr_patch: np.ndarray
    hr_patch: np.ndarray
    scale: int
    record: PatchRecord | None = None

    def __post_init__(self):
        if self.lr_patch.shape != self.hr_patch.shape:
            raise ValueError("lr and hr patches differ in size")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")


@lru_cache(maxsize=8)
def _prepared_plane(path: str, transform: int, scale: int):
    hr = crop_to_multiple(dihedral(luma(read_image(path)), transform), scale)
    return hr, degrade(hr, scale)


def _tiles(h, w, patch, stride):
    for y in range(0, h - patch + 1, stride):
        for x in range(0, w - patch + 1, stride):
            yield x, y


def make_sr_dataset(
    image_dir,
    scales=(2, 3, 4),
    patch: int = 41,
    stride: int = 41,
    augment: bool = True,
    seed: int = 0,
) -> Iterator[SamplePair]:
    """Stream (LR input, HR target) luma patch pairs.

    For each source image (in an order fixed by ``seed``), each dihedral
    transform (only identity unless ``augment``) and each scale: crop to a
    multiple of the scale, downscale and re-upscale bicubically, then tile
    into non-overlapping patches in raster order.
    """
    files = list_images(image_dir)
    if not files:
        raise DataError(f"no images found in {image_dir}")
    order = np.random.default_rng(seed).permutation(len(files)) if seed else np.arange(len(files))
    transforms = range(8) if augment else (0,)
    for fi in order:
        path = str(files[fi])
        for t in transforms:
            for s in scales:
                hr, lr = _prepared_plane(path, t, s)
                if min(hr.shape) < patch:
                    raise DataError(f"{path}: {hr.shape} is smaller than the {patch}px patch")
                for x, y in _tiles(*hr.shape, patch, stride):
                    yield SamplePair(
                        lr[y : y + patch, x : x + patch].astype(np.float32),
                        hr[y : y + patch, x : x + patch].astype(np.float32),
                        s,
                        PatchRecord(path, s, x, y, t),
                    )


def pair_from_record(rec: PatchRecord, patch: int = 41) -> SamplePair:
    hr, lr = _prepared_plane(rec.source, rec.transform, rec.scale)
    sl = (slice(rec.y, rec.y + patch), slice(rec.x, rec.x + patch))
    return SamplePair(lr[sl].astype(np.float32), hr[sl].astype(np.float32), rec.scale, rec)


MANIFEST_HEADER = "# srforge patch manifest v1"


def write_manifest(path, records, patch: int = 41, stride: int = 41) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{MANIFEST_HEADER} patch={patch} stride={stride}\n")
        f.write("# source\tscale\tx\ty\ttransform\n")
        for rec in records:
            f.write(rec.to_line() + "\n")
            n += 1
    return n


def read_manifest(path):
    """Returns ``(records, patch_size)``."""
    records, patch = [], 41
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if not header.startswith(MANIFEST_HEADER):
            raise DataError(f"{path}: not a patch manifest")
        for token in header.split()[1:]:
            if token.startswith("patch="):
                patch = int(token.split("=", 1)[1])
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            src, s, x, y, t = line.rstrip("\n").split("\t")
            records.append(PatchRecord(src, int(s), int(x), int(y), int(t)))
    return records, patch


def stack_pairs(pairs):
    """Stack SamplePairs into ``(lr, hr)`` arrays of shape (n, 1, p, p)."""
    pairs = list(pairs)
    lr = np.stack([p.lr_patch for p in pairs])[:, None]
    hr = np.stack([p.hr_patch for p in pairs])[:, None]
    return lr, hr


# ---------------------------------------------------------------- MNIST IDX

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class MnistSet:
    images: np.ndarray  # (n, 1, 28, 28) float32 in [0, 1]
    labels: np.ndarray  # (n,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) > 9:
            raise DataError("labels must be in 0..9")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return MnistSet(self.images[idx], self.labels[idx])


def _open_maybe_gz(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    if len(raw) < 8:
        raise DataError("IDX file truncated (no header)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataError(f"bad IDX magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise DataError("IDX file truncated (header)")
    dims = struct.unpack(f">{ndim}I", raw[4:hdr])
    count = int(np.prod(dims))
    if len(raw) - hdr != count:
        raise DataError(f"IDX payload has {len(raw) - hdr} bytes, header implies {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=hdr).reshape(dims)


def idx_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def load_mnist(idx_image_file, idx_label_file) -> MnistSet:
    imgs = parse_idx(_open_maybe_gz(idx_image_file), IDX_IMAGES_MAGIC)
    labels = parse_idx(_open_maybe_gz(idx_label_file), IDX_LABELS_MAGIC)
    if imgs.ndim != 3 or labels.ndim != 1:
        raise DataError("unexpected IDX ranks for MNIST")
    if len(imgs) != len(labels):
        raise DataError(f"{len(imgs)} images but {len(labels)} labels")
    images = (imgs.astype(np.float32) / np.float32(255.0))[:, None]
    return MnistSet(images, labels.copy())


def mnist_to_idx(ds: MnistSet) -> tuple[bytes, bytes]:
    """Serialize back to (image bytes, label bytes); inverse of :func:`load_mnist`."""
    pix = np.round(ds.images[:, 0].astype(np.float64) * 255.0).astype(np.uint8)
    return idx_bytes(pix), idx_bytes(ds.labels)


def save_mnist(ds: MnistSet, image_path, label_path) -> None:
    ib, lb = mnist_to_idx(ds)
    Path(image_path).write_bytes(ib)
    Path(label_path).write_bytes(lb)


def downscale_mnist(ds: MnistSet, factor: int = 4) -> np.ndarray:
    """Bicubic (antialiased) LR versions of every image, shape (n, 1, 28/f, 28/f)."""
    n, _, h, w = ds.images.shape
    mh = _resize_matrix(h, h // factor, True)
    mw = _resize_matrix(w, w // factor, True)
    out = mh @ ds.images[:, 0].astype(np.float64) @ mw.T
    return out[:, None].astype(np.float32)


def find_mnist(root) -> dict:
    """Locate the four standard MNIST files (optionally .gz) under ``root``."""
    root = Path(root)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    found = {}
    for key, stem in names.items():
        for cand in (root / stem, root / (stem + ".gz"), root / stem.replace("-idx", ".idx")):
            if cand.exists():
                found[key] = cand
                break
        else:
            raise DataError(f"MNIST file {stem} not found under {root}")
    return found
