"""Label-conditioned GAN for 7x7 -> 28x28 MNIST super-resolution.

The generator takes a bicubic-downscaled digit (no noise input) and, when
conditioning is on, ten constant one-hot label planes.  The discriminator
sees a 28x28 image plus the same label planes and outputs a probability.
With ``conditioned=False`` the label planes are simply not attached, which
gives the unconditional baseline through the same code path.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, Dense, Flatten, LeakyReLU, ReLU, Sequential, Sigmoid, Upsample, init_parameters
from .optim import AdamState, adam_step
from .pipeline import MnistSet, downscale_mnist
from .tensor import ConvSpec, NonFiniteError

log = logging.getLogger(__name__)

N_CLASSES = 10
PROB_EPS = 1e-7


def condition_input(images, labels, conditioned: bool = True):
    """Append one-hot label planes to a batch of images.

    ``images`` is (n, c, h, w), ``labels`` is (n,) with values 0-9.  Returns
    (n, c + 10, h, w), or ``images`` itself when ``conditioned`` is false.
    """
    if not conditioned:
        return images
    labels = np.asarray(labels).reshape(-1)
    if len(labels) != images.shape[0]:
        raise ValueError("one label per image required")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= N_CLASSES:
        raise ValueError("labels must be in 0..9")
    n, _, h, w = images.shape
    planes = np.zeros((n, N_CLASSES, h, w), dtype=images.dtype)
    planes[np.arange(n), labels] = 1
    return np.concatenate([images, planes], axis=1)


@dataclass
class GanLosses:
    d_loss: float
    g_loss: float
    # derivatives of the batch-mean losses w.r.t. each probability
    d_grad_real: np.ndarray
    d_grad_fake: np.ndarray
    g_grad_fake: np.ndarray


def gan_losses(d_real, d_fake, saturating: bool = False) -> GanLosses:
    """Adversarial losses averaged over the batch.

    ``d_loss = -[log D(x) + log(1 - D(G))]``.  The generator loss is the
    non-saturating ``-log D(G)`` by default, or the literal minimax
    ``log(1 - D(G))`` when ``saturating``.  Probabilities are clamped to
    ``[1e-7, 1 - 1e-7]``; gradients are zero where the clamp is active.
    """
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    n = d_real.size
    pr = np.clip(d_real, PROB_EPS, 1 - PROB_EPS)
    pf = np.clip(d_fake, PROB_EPS, 1 - PROB_EPS)
    live_r = (d_real >= PROB_EPS) & (d_real <= 1 - PROB_EPS)
    live_f = (d_fake >= PROB_EPS) & (d_fake <= 1 - PROB_EPS)
    d_loss = -(np.log(pr).sum() + np.log1p(-pf).sum()) / n
    d_grad_real = np.where(live_r, -1.0 / pr, 0.0) / n
    d_grad_fake = np.where(live_f, 1.0 / (1.0 - pf), 0.0) / n
    if saturating:
        g_loss = np.log1p(-pf).sum() / n
        g_grad_fake = np.where(live_f, -1.0 / (1.0 - pf), 0.0) / n
    else:
        g_loss = -np.log(pf).sum() / n
        g_grad_fake = np.where(live_f, -1.0 / pf, 0.0) / n
    return GanLosses(float(d_loss), float(g_loss), d_grad_real, d_grad_fake, g_grad_fake)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of (n, 10, 1, 1) logits; returns ``(loss, grad)``."""
    z = logits.reshape(logits.shape[0], -1).astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    idx = np.asarray(labels).reshape(-1)
    loss = -logp[np.arange(n), idx].mean()
    grad = np.exp(logp)
    grad[np.arange(n), idx] -= 1
    grad /= n
    return float(loss), grad.reshape(logits.shape).astype(logits.dtype)


# ---------------------------------------------------------------- networks


def _conv(cin, cout, k=3, stride=1):
    return Conv2d(ConvSpec(cin, cout, (k, k), stride=stride, padding=k // 2))


def build_generator(conditioned: bool = True, width: int = 64, alpha: float = 0.2) -> Sequential:
    cin = 1 + (N_CLASSES if conditioned else 0)
    return Sequential(
        [
            _conv(cin, width),
            LeakyReLU(alpha),
            Upsample(2),
            _conv(width, width),
            LeakyReLU(alpha),
            Upsample(2),
            _conv(width, width // 2),
            LeakyReLU(alpha),
            _conv(width // 2, 1),
            Sigmoid(),
        ]
    )


def build_discriminator(conditioned: bool = True, width: int = 32, alpha: float = 0.2, size: int = 28) -> Sequential:
    cin = 1 + (N_CLASSES if conditioned else 0)
    side = (size + 1) // 2
    side = (side + 1) // 2
    return Sequential(
        [
            _conv(cin, width, stride=2),
            LeakyReLU(alpha),
            _conv(width, 2 * width, stride=2),
            LeakyReLU(alpha),
            Flatten(),
            Dense(2 * width * side * side, 1),
            Sigmoid(),
        ]
    )


def build_classifier() -> Sequential:
    """Two strided convs and two dense layers with ReLU; outputs 10 logits."""
    return Sequential(
        [
            _conv(1, 32, stride=2),
            ReLU(),
            _conv(32, 64, stride=2),
            ReLU(),
            Flatten(),
            Dense(64 * 7 * 7, 128),
            ReLU(),
            Dense(128, N_CLASSES),
        ]
    )


@dataclass
class GanPair:
    generator: Sequential
    discriminator: Sequential
    conditioned: bool = True

    def generate(self, lr_images, labels=None, batch_size: int = 500):
        out = []
        for i in range(0, len(lr_images), batch_size):
            lab = None if labels is None else labels[i : i + batch_size]
            x = condition_input(lr_images[i : i + batch_size], lab, self.conditioned)
            out.append(self.generator.forward(x, train=False))
        return np.concatenate(out) if out else np.zeros((0, 1, 28, 28), np.float32)

    def discriminate(self, images, labels=None):
        return self.discriminator.forward(condition_input(images, labels, self.conditioned), train=False)


@dataclass
class GanConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.5  # 0.9 let D win outright at lr 1e-3 (see README)
    beta2: float = 0.999
    conditioned: bool = True
    saturating: bool = False
    seed: int = 0
    leaky_alpha: float = 0.2
    g_width: int = 64
    d_width: int = 32
    # start the generator at the mean training brightness (see init_output_bias)
    mean_bias_init: bool = True


@dataclass
class GanLossTrace:
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    # fraction of the batch D classifies correctly (real > 0.5, fake < 0.5), before its update
    d_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.d_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "d_loss", "g_loss"])
        for i, (d, g) in enumerate(zip(self.d_loss, self.g_loss)):
            w.writerow([i, repr(d), repr(g)])
        return buf.getvalue()


class TrainingDiverged(NonFiniteError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


def init_output_bias(generator: Sequential, mean_pixel: float) -> None:
    """Set the last conv bias so the sigmoid head starts at ``mean_pixel``.

    A freshly initialised head sits near 0.5, far brighter than MNIST
    (mean ~0.13).  D then separates real from fake by brightness alone and
    G's fastest reply drives every pixel into the saturated low tail of the
    sigmoid, where gradients fall below Adam's epsilon and training stalls.
    """
    m = float(np.clip(mean_pixel, 1e-3, 1 - 1e-3))
    last = generator.layers[-2]
    last.params["bias"][...] = np.log(m / (1 - m))


def iterations_per_epoch(n_images: int, batch_size: int) -> int:
    # the final partial batch is dropped
    return n_images // batch_size


def train_srcgan(dataset: MnistSet, config: GanConfig, lr_images=None, on_epoch=None):
    """Alternating D/G training with Adam; returns ``(GanPair, GanLossTrace)``.

    One discriminator step then one generator step per batch.  The
    generator forward pass made for the D step is reused for the G step
    (G's weights have not changed in between).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if lr_images is None:
        lr_images = downscale_mnist(dataset, 4)
    gen = build_generator(config.conditioned, config.g_width, config.leaky_alpha)
    disc = build_discriminator(config.conditioned, config.d_width, config.leaky_alpha)
    init_parameters(gen, config.seed)
    init_parameters(disc, config.seed + 1)
    if config.mean_bias_init:
        init_output_bias(gen, float(np.mean(dataset.images)))
    pair = GanPair(gen, disc, config.conditioned)
    opt_g = AdamState(config.lr, config.beta1, config.beta2)
    opt_d = AdamState(config.lr, config.beta1, config.beta2)
    trace = GanLossTrace()
    hr_all = dataset.images
    labels_all = dataset.labels
    n_iter = iterations_per_epoch(len(dataset), config.batch_size)
    cond = config.conditioned

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
        for it in range(n_iter):
            idx = np.sort(order[it * config.batch_size : (it + 1) * config.batch_size])
            hr, lab, lr = hr_all[idx], labels_all[idx], lr_images[idx]

            # discriminator step
            gen.zero_grad()
            disc.zero_grad()
            fake = gen.forward(condition_input(lr, lab, cond), train=True)
            m = len(idx)
            both = np.concatenate([condition_input(hr, lab, cond), condition_input(fake, lab, cond)])
            d_out = disc.forward(both, train=True)
            d_real, d_fake = d_out[:m], d_out[m:]
            losses = gan_losses(d_real, d_fake, config.saturating)
            if not (np.isfinite(losses.d_loss) and np.isfinite(losses.g_loss)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} iter {it}", trace)
            d_grad = np.concatenate([losses.d_grad_real, losses.d_grad_fake]).reshape(d_out.shape)
            disc.backward(d_grad.astype(d_out.dtype))
            adam_step(disc.named_parameters(), disc.named_grads(), opt_d)

            # generator step through the updated discriminator
            disc.zero_grad()
            d_fake2 = disc.forward(condition_input(fake, lab, cond), train=True)
            g_losses = gan_losses(d_real, d_fake2, config.saturating)
            g_in = disc.backward(g_losses.g_grad_fake.reshape(d_fake2.shape).astype(d_fake2.dtype))
            gen.backward(g_in[:, :1])
            adam_step(gen.named_parameters(), gen.named_grads(), opt_g)

            acc = 0.5 * (float(np.mean(d_real > 0.5)) + float(np.mean(d_fake < 0.5)))
            trace.d_loss.append(losses.d_loss)
            trace.g_loss.append(g_losses.g_loss)
            trace.d_accuracy.append(acc)
        log.info("epoch %d: d_loss %.4f g_loss %.4f", epoch, trace.d_loss[-1], trace.g_loss[-1])
        if on_epoch is not None:
            on_epoch(epoch, pair, trace)
    return pair, trace


# ---------------------------------------------------------------- classifier


def accuracy(classifier, images, labels, batch_size: int = 500) -> float:
    if len(labels) == 0:
        return float("nan")
    correct = 0
    for i in range(0, len(labels), batch_size):
        logits = classifier.forward(images[i : i + batch_size], train=False)
        correct += int((logits.reshape(logits.shape[0], -1).argmax(axis=1) == labels[i : i + batch_size]).sum())
    return correct / len(labels)


def train_classifier(train: MnistSet, epochs: int = 5, batch_size: int = 128, lr: float = 1e-3, seed: int = 0, on_epoch=None):
    net = build_classifier()
    init_parameters(net, seed)
    opt = AdamState(lr)
    n_iter = iterations_per_epoch(len(train), batch_size)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(train))
        for it in range(n_iter):
            idx = order[it * batch_size : (it + 1) * batch_size]
            net.zero_grad()
            logits = net.forward(train.images[idx], train=True)
            loss, grad = softmax_cross_entropy(logits, train.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"classifier loss non-finite at epoch {epoch}")
            net.backward(grad)
            adam_step(net.named_parameters(), net.named_grads(), opt)
        log.info("classifier epoch %d: last loss %.4f", epoch, loss)
        if on_epoch is not None:
            on_epoch(epoch, net)
    return net


def train_eval_classifier(train: MnistSet, test: MnistSet, epochs: int = 5, batch_size: int = 128, lr: float = 1e-3, seed: int = 0):
    net = train_classifier(train, epochs, batch_size, lr, seed)
    return net, accuracy(net, test.images, test.labels)


def classify_generated(classifier, gan, test: MnistSet, lr_images=None) -> float:
    """Accuracy of ``classifier`` on super-resolved test digits.

    ``gan`` is a :class:`GanPair` or any callable ``(lr_images, labels) -> hr``.
    """
    if lr_images is None:
        lr_images = downscale_mnist(test, 4)
    if isinstance(gan, GanPair):
        hr = gan.generate(lr_images, test.labels if gan.conditioned else None)
    else:
        hr = gan(lr_images, test.labels)
    return accuracy(classifier, np.asarray(hr, dtype=np.float32), test.labels)


def bicubic_upscaler(lr_images, labels=None):
    from .pipeline import bicubic_resize

    out = np.stack([bicubic_resize(im[0], 28, 28) for im in lr_images])[:, None]
    return np.clip(out, 0, 1).astype(np.float32)


def sample_grid(rows, pad: int = 2) -> np.ndarray:
    """Tile rows of (n, 1, h, w) images (h, w may differ per row) into one [0, 1] canvas.

    Smaller images are nearest-upscaled to the largest size so every column lines up.
    """
    size = max(r.shape[-1] for r in rows)
    n = max(len(r) for r in rows)
    canvas = np.ones((len(rows) * (size + pad) + pad, n * (size + pad) + pad), dtype=np.float32)
    for i, row in enumerate(rows):
        f = size // row.shape[-1]
        for j, im in enumerate(row):
            tile = np.kron(im[0], np.ones((f, f), dtype=np.float32))
            y, x = pad + i * (size + pad), pad + j * (size + pad)
            canvas[y : y + size, x : x + size] = np.clip(tile, 0, 1)
    return canvas
