"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SRFG"                      magic
    u16 version                  currently 1
    u16 len, bytes               model-kind tag (ASCII)
    u16 n_fields                 model/run configuration
      u16 len, bytes key
      u8 type                    0 = i64, 1 = f64, 2 = UTF-8 string (u32 len + bytes)
      value
    u32 n_records                named tensors
      u32 len, bytes name
      u32 rank, rank x u32 dims
      float32 data, row-major

Saving the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SRFG"
VERSION = 1

_INT, _FLOAT, _STR = 0, 1, 2


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = bytearray(MAGIC)
        out += struct.pack("<H", VERSION)
        tag = self.kind.encode("ascii")
        out += struct.pack("<H", len(tag)) + tag
        out += struct.pack("<H", len(self.config))
        for key, value in self.config.items():
            kb = key.encode("utf-8")
            out += struct.pack("<H", len(kb)) + kb
            if isinstance(value, bool) or isinstance(value, (int, np.integer)):
                out += struct.pack("<Bq", _INT, int(value))
            elif isinstance(value, (float, np.floating)):
                out += struct.pack("<Bd", _FLOAT, float(value))
            elif isinstance(value, str):
                vb = value.encode("utf-8")
                out += struct.pack("<BI", _STR, len(vb)) + vb
            else:
                raise CheckpointError(f"config value for {key!r} has unsupported type {type(value)}")
        out += struct.pack("<I", len(self.tensors))
        for name, arr in self.tensors.items():
            nb = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4", order="C")  # keeps 0-d shapes
            out += struct.pack("<I", len(nb)) + nb
            out += struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
            out += a.tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        view = memoryview(raw)
        pos = 0

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(view):
                raise CheckpointError("checkpoint truncated")
            vals = struct.unpack_from(fmt, view, pos)
            pos += size
            return vals

        def take_bytes(n):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("checkpoint truncated")
            b = bytes(view[pos : pos + n])
            pos += n
            return b

        if take_bytes(4) != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (version,) = take("<H")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = take("<H")
        kind = take_bytes(n).decode("ascii")
        config = {}
        (nf,) = take("<H")
        for _ in range(nf):
            (kl,) = take("<H")
            key = take_bytes(kl).decode("utf-8")
            (t,) = take("<B")
            if t == _INT:
                (config[key],) = take("<q")
            elif t == _FLOAT:
                (config[key],) = take("<d")
            elif t == _STR:
                (sl,) = take("<I")
                config[key] = take_bytes(sl).decode("utf-8")
            else:
                raise CheckpointError(f"unknown config value type {t}")
        tensors = {}
        (nr,) = take("<I")
        for _ in range(nr):
            (nl,) = take("<I")
            name = take_bytes(nl).decode("utf-8")
            (rank,) = take("<I")
            dims = take(f"<{rank}I") if rank else ()
            count = int(np.prod(dims)) if rank else 1
            data = take_bytes(4 * count)
            tensors[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(dims)
        if pos != len(view):
            raise CheckpointError(f"{len(view) - pos} trailing bytes after last record")
        return cls(kind, config, tensors)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(ckpt.to_bytes())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return Checkpoint.from_bytes(raw)


# ---------------------------------------------------------------- model <-> checkpoint


def model_checkpoint(net, kind: str, config: dict, extra=None) -> Checkpoint:
    tensors = {name: p for name, p in net.named_parameters().items()}
    if extra:
        tensors.update(extra)
    return Checkpoint(kind, dict(config), tensors)


def build_model(kind: str, config: dict):
    """Instantiate an (uninitialised) network of the given kind from its config fields."""
    from . import models, srcgan

    if kind == "vdsr_resnext":
        cfg = models.ModelConfig(
            depth_middle=config["depth_middle"],
            block_width=config["block_width"],
            cardinality=config["cardinality"],
            base_channels=config["base_channels"],
            kernel=config.get("kernel", 3),
            with_bias=bool(config["with_bias"]),
        )
        return models.build_vdsr_resnext(cfg)
    if kind == "vdsr":
        return models.build_vdsr_baseline(
            config["depth"], bool(config["with_bias"]), config.get("base_channels", 64), config.get("kernel", 3)
        )
    if kind == "srcgan_generator":
        return srcgan.build_generator(bool(config["conditioned"]), config.get("g_width", 64), config.get("leaky_alpha", 0.2))
    if kind == "srcgan_discriminator":
        return srcgan.build_discriminator(bool(config["conditioned"]), config.get("d_width", 32), config.get("leaky_alpha", 0.2))
    if kind == "classifier":
        return srcgan.build_classifier()
    raise CheckpointError(f"unknown model kind {kind!r}")


def load_model(path):
    """Returns ``(net, checkpoint)`` with the network's parameters restored."""
    ckpt = load_checkpoint(path)
    net = build_model(ckpt.kind, ckpt.config)
    restore_parameters(net, ckpt)
    return net, ckpt


def restore_parameters(net, ckpt: Checkpoint) -> None:
    expected = net.named_parameters()
    missing = [n for n in expected if n not in ckpt.tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    for name in expected:
        net.set_parameter(name, ckpt.tensors[name])
