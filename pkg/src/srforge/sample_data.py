"""Small stand-in datasets for machines without the benchmark downloads.

* :func:`mnist_subset` - the 5,000 real MNIST digits (500 per class) that
  ship inside the ``mlxtend`` wheel, split into train/test MnistSets.
* :func:`natural_images` - the public-domain photographs bundled with
  ``scikit-image``, written out as PNG files.

Neither is a substitute for the real benchmarks; they exist so that the
training and evaluation code can be exercised end to end offline.
"""

from __future__ import annotations

import gzip
import importlib.util
import os
from pathlib import Path

import numpy as np

from .pipeline import DataError, MnistSet, find_mnist, load_mnist, write_png

# fixed split so results are comparable between runs
SKIMAGE_TRAIN = (
    "brick", "grass", "gravel", "moon", "page", "text", "rocket",
    "hubble_deep_field", "immunohistochemistry", "cell", "clock",
)
SKIMAGE_VAL = ("astronaut", "camera", "chelsea", "coffee", "coins")


def data_root() -> Path | None:
    root = os.environ.get("SRFORGE_DATA_DIR")
    return Path(root) if root else None


def mnist_subset(n_test: int = 1000, seed: int = 0) -> tuple[MnistSet, MnistSet]:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        raise DataError("mlxtend is not installed; it carries the bundled MNIST subset")
    path = Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"
    with gzip.open(path, "rt") as f:
        table = np.loadtxt(f, delimiter=",", dtype=np.uint8)
    pixels, labels = table[:, :-1], table[:, -1]
    order = np.random.default_rng(seed).permutation(len(labels))
    images = (pixels.reshape(-1, 1, 28, 28).astype(np.float32) / np.float32(255.0))[order]
    labels = labels[order]
    test = MnistSet(images[:n_test], labels[:n_test])
    train = MnistSet(images[n_test:], labels[n_test:])
    return train, test


def full_mnist(root=None) -> tuple[MnistSet, MnistSet] | None:
    """The official 60k/10k MNIST from ``root`` (default ``$SRFORGE_DATA_DIR/mnist``), or None."""
    root = Path(root) if root else (data_root() / "mnist" if data_root() else None)
    if root is None or not root.is_dir():
        return None
    try:
        files = find_mnist(root)
    except DataError:
        return None
    return (
        load_mnist(files["train_images"], files["train_labels"]),
        load_mnist(files["test_images"], files["test_labels"]),
    )


def natural_images(dest, names=SKIMAGE_TRAIN) -> list[Path]:
    """Write the named scikit-image sample photographs into ``dest`` as PNG."""
    from skimage import data as skdata

    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    out = []
    for name in names:
        img = np.asarray(getattr(skdata, name)())
        if img.ndim == 3 and img.shape[2] == 4:
            img = img[..., :3]
        if img.dtype != np.uint8:
            img = np.clip(img * (255 if img.max() <= 1 else 1), 0, 255).astype(np.uint8)
        p = dest / f"{name}.png"
        if not p.exists():
            write_png(p, img)
        out.append(p)
    return out
