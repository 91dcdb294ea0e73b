"""SGD with momentum/weight decay, Adam, gradient clipping and a staircase LR schedule.

Optimizers work on the ``{name: array}`` maps returned by
``Sequential.named_parameters()`` / ``named_grads()`` and update parameters
in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError


def _is_weight(name: str) -> bool:
    return name.rsplit(".", 1)[-1] == "weight"


def _check_grads(grads):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")


def clip_gradient(g, theta):
    """Element-wise clamp of a gradient to ``[-theta, theta]``."""
    return np.clip(g, -theta, theta)


@dataclass
class SgdState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_theta: float | None = 0.4
    # "fixed": clamp to +-theta; "adjustable": clamp to +-theta/lr
    clip_mode: str = "fixed"
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.clip_mode not in ("fixed", "adjustable"):
            raise ValueError(f"unknown clip_mode {self.clip_mode!r}")

    @property
    def clip_bound(self):
        if self.clip_theta is None:
            return None
        return self.clip_theta / self.lr if self.clip_mode == "adjustable" else self.clip_theta


def sgd_step(params, grads, state: SgdState) -> None:
    """One momentum-SGD update: clip, then weight decay, then ``v = m v - lr g; p += v``.

    Weight decay only touches parameters whose name ends in ``weight``.
    """
    _check_grads(grads)
    bound = state.clip_bound
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        g = g.astype(np.float64)
        if bound is not None:
            g = clip_gradient(g, bound)
        if state.weight_decay and _is_weight(name):
            g = g + state.weight_decay * p
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros(p.shape, dtype=p.dtype)
        # velocity is kept in the parameter dtype so checkpoints restore it exactly
        v = (state.momentum * v - state.lr * g).astype(p.dtype)
        state.velocity[name] = v
        p += v


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState) -> None:
    _check_grads(grads)
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=p.dtype)
            v = np.zeros(p.shape, dtype=p.dtype)
        m = (state.beta1 * m + (1 - state.beta1) * g).astype(p.dtype)
        v = (state.beta2 * v + (1 - state.beta2) * g * g).astype(p.dtype)
        state.m[name], state.v[name] = m, v
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 0.1
    decay_factor: float = 10.0
    decay_every_epochs: int = 10

    def __post_init__(self):
        if min(self.initial_lr, self.decay_factor, self.decay_every_epochs) <= 0:
            raise ValueError("schedule fields must be positive")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    k = epoch // schedule.decay_every_epochs
    return schedule.initial_lr / schedule.decay_factor**k


def global_grad_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
