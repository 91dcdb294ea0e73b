"""Training loop for the residual SR networks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, build_model, load_checkpoint, restore_parameters, save_checkpoint
from .config import RunConfig
from .metrics import evaluate_sr
from .models import conv_layers
from .nn import init_parameters
from .optim import AdamState, LrSchedule, SgdState, adam_step, lr_at, sgd_step
from .tensor import NonFiniteError, mse_loss

log = logging.getLogger(__name__)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, iter, loss, lr, val_psnr or None)

    def header(self) -> str:
        return "epoch,iter,loss,lr,val_psnr\n"

    @staticmethod
    def format_row(row) -> str:
        epoch, it, loss, lr, val = row
        return f"{epoch},{it},{loss!r},{lr!r},{'' if val is None else repr(val)}\n"


class Diverged(NonFiniteError):
    pass


def build_sr_model(cfg: RunConfig):
    net = build_model(cfg.model, cfg.model_fields())
    init_parameters(net, cfg.seed)
    if cfg.zero_init_output:
        conv_layers(net)[-1].params["weight"][...] = 0
    return net


# optimizer state tensors are stored next to the weights under these prefixes
_STATE_SLOTS = {"sgd": {"velocity": "opt.velocity."}, "adam": {"m": "opt.m.", "v": "opt.v."}}


def _make_optimizer(cfg: RunConfig):
    if cfg.optimizer == "adam":
        return AdamState(cfg.lr), adam_step
    clip = None if cfg.clip_mode == "none" else cfg.clip_theta
    mode = "fixed" if cfg.clip_mode == "none" else cfg.clip_mode
    return SgdState(cfg.lr, cfg.momentum, cfg.weight_decay, clip, mode), sgd_step


def epoch_checkpoint(net, state, cfg: RunConfig, epoch: int, iteration: int) -> Checkpoint:
    config = dict(cfg.model_fields())
    config["epoch"] = epoch
    config["iteration"] = iteration
    config["seed"] = cfg.seed
    if isinstance(state, AdamState):
        config["adam_step"] = state.step
    tensors = {name: p.copy() for name, p in net.named_parameters().items()}
    for attr, prefix in _STATE_SLOTS[cfg.optimizer].items():
        for name, v in getattr(state, attr).items():
            tensors[prefix + name] = v.copy()
    return Checkpoint(cfg.model, config, tensors)


def _restore_optimizer(state, cfg: RunConfig, ckpt: Checkpoint) -> None:
    for attr, prefix in _STATE_SLOTS[cfg.optimizer].items():
        slot = getattr(state, attr)
        for name, arr in ckpt.tensors.items():
            if name.startswith(prefix):
                slot[name[len(prefix):]] = arr.copy()
    if isinstance(state, AdamState):
        state.step = int(ckpt.config.get("adam_step", 0))


def train_sr(cfg: RunConfig, lr_patches, hr_patches, resume=None, on_row=None, on_epoch=None):
    """SGD training of ``cfg.model`` on stacked (n, 1, p, p) patch arrays.

    Returns ``(net, TrainLog)``.  One checkpoint per ``checkpoint_every``
    epochs goes to ``cfg.out_dir`` (if set).  ``resume`` is a checkpoint
    path written by an earlier run with the same config; training continues
    with the following epoch.
    """
    if len(lr_patches) != len(hr_patches) or len(lr_patches) == 0:
        raise ValueError("need equal, non-zero numbers of LR and HR patches")
    net = build_sr_model(cfg)
    state, step = _make_optimizer(cfg)
    schedule = LrSchedule(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every)
    start_epoch, iteration = 0, 0
    if resume is not None:
        ckpt = load_checkpoint(resume) if not isinstance(resume, Checkpoint) else resume
        restore_parameters(net, ckpt)
        _restore_optimizer(state, cfg, ckpt)
        start_epoch = int(ckpt.config["epoch"]) + 1
        iteration = int(ckpt.config["iteration"])

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    tlog = TrainLog()
    n = len(lr_patches)
    bs = min(cfg.batch_size, n)
    per_epoch = n // bs
    last_good = epoch_checkpoint(net, state, cfg, start_epoch - 1, iteration)
    for epoch in range(start_epoch, cfg.epochs):
        state.lr = lr_at(schedule, epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for b in range(per_epoch):
            if cfg.max_iters and iteration >= cfg.max_iters:
                break
            idx = np.sort(order[b * bs : (b + 1) * bs])
            x, y = lr_patches[idx], hr_patches[idx]
            net.zero_grad()
            try:
                pred = net.forward(x, train=True)
                loss, grad = mse_loss(pred, y)
                net.backward(grad)
                step(net.named_parameters(), net.named_grads(), state)
            except NonFiniteError as e:
                if out_dir is not None:
                    save_checkpoint(out_dir / "last_good.srfg", last_good)
                raise Diverged(f"epoch {epoch} iter {iteration}: {e}") from e
            row = (epoch, iteration, loss, state.lr, None)
            iteration += 1
            tlog.rows.append(row)
            if on_row is not None:
                on_row(row)
        val = None
        if cfg.val_dir:
            val = evaluate_sr(net, cfg.val_dir, cfg.val_scale).mean_psnr
            if tlog.rows:
                tlog.rows[-1] = tlog.rows[-1][:4] + (val,)
        ckpt = last_good = epoch_checkpoint(net, state, cfg, epoch, iteration)
        if out_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1):
            save_checkpoint(out_dir / f"epoch_{epoch:03d}.srfg", ckpt)
        log.info("epoch %d done: loss %.6g lr %g val %s", epoch, tlog.rows[-1][2] if tlog.rows else float("nan"), state.lr, val)
        if on_epoch is not None:
            on_epoch(epoch, net, tlog)
        if cfg.max_iters and iteration >= cfg.max_iters:
            break
    return net, tlog
