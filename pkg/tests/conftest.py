import sys

import numpy as np
import pytest


def numerical_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of float64 array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest entry-wise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def naive_conv2d(x, w, b, stride, pad, groups):
    """Direct loop convolution used as an oracle; shares no code with the library."""
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    cout_g = cout // groups
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for oc in range(cout):
            g = oc // cout_g
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(cin_g):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (
                                    xp[bi, g * cin_g + ic, oy * stride + ky, ox * stride + kx]
                                    * w[oc, ic, ky, kx]
                                )
                    out[bi, oc, oy, ox] = acc + (0.0 if b is None else b[oc])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def natural_train_dir(tmp_path_factory):
    pytest.importorskip("skimage")
    from srforge.sample_data import natural_images

    d = tmp_path_factory.mktemp("natural_train")
    natural_images(d)
    return d


@pytest.fixture(scope="session")
def natural_val_dir(tmp_path_factory):
    pytest.importorskip("skimage")
    from srforge.sample_data import SKIMAGE_VAL, natural_images

    d = tmp_path_factory.mktemp("natural_val")
    natural_images(d, SKIMAGE_VAL)
    return d


@pytest.fixture(scope="session")
def mnist_small():
    pytest.importorskip("mlxtend")
    from srforge.sample_data import mnist_subset

    return mnist_subset()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
