"""Checkpoint snapshot/restore and the binary container format.

Layout: magic ``WCNN``, u32 format version, u32 JSON length, JSON metadata
blob, then per tensor: u32 name length, name bytes, u32 rank, u32 extents,
raw little-endian float32 payload. Everything needed to resume (parameters,
BN running statistics, Adam moments and step counts, epoch, seed) rides in
one file; reloading reproduces eval-mode forwards bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .ioutil import atomic_write_bytes
from .model import WCNNConfig, build_wcnn

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "snapshot_checkpoint",
    "restore_models",
    "init_cascade_from_standalone",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"WCNN"
_VERSION = 1
_MAX_RANK = 8
_MAX_ELEMS = 1 << 28


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    mode: str  # "standalone" | "cascade"
    wcnn: WCNNConfig
    n_cascades: int
    fidelity_lam: float
    share_weights: bool
    epoch: int
    seed: int
    tensors: dict = field(default_factory=dict)  # name -> float32 ndarray
    adam_t: dict = field(default_factory=dict)  # parameter name -> step count


def _unique_models(models, share_weights):
    return models[:1] if share_weights else models


def snapshot_checkpoint(models, *, mode, n_cascades, fidelity_lam, share_weights,
                        epoch, seed):
    """Deep-copy the full trainable state of ``models`` into a Checkpoint."""
    tensors = {}
    adam_t = {}
    for i, model in enumerate(_unique_models(models, share_weights)):
        prefix = f"wcnn{i}."
        for name, p in model.named_parameters().items():
            tensors[prefix + name] = p.data.copy()
            tensors[f"adam.m.{prefix}{name}"] = p.m.copy()
            tensors[f"adam.v.{prefix}{name}"] = p.v.copy()
            adam_t[prefix + name] = p.t
        for name, buf in model.named_buffers().items():
            tensors[prefix + name] = buf.copy()
    return Checkpoint(mode=mode, wcnn=models[0].cfg, n_cascades=n_cascades,
                      fidelity_lam=fidelity_lam, share_weights=share_weights,
                      epoch=epoch, seed=seed, tensors=tensors, adam_t=adam_t)


def _load_into(model, ck, prefix):
    params = model.named_parameters()
    buffers = model.named_buffers()
    for name, p in params.items():
        key = prefix + name
        for store, target in ((key, p.data), (f"adam.m.{key}", p.m),
                              (f"adam.v.{key}", p.v)):
            if store not in ck.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {store!r}")
            src = ck.tensors[store]
            if src.shape != target.shape:
                raise CheckpointError(
                    f"tensor {store!r} has shape {src.shape}, expected {target.shape}")
            target[...] = src
        p.t = int(ck.adam_t.get(key, 0))
    for name, buf in buffers.items():
        key = prefix + name
        if key not in ck.tensors:
            raise CheckpointError(f"checkpoint is missing buffer {key!r}")
        if ck.tensors[key].shape != buf.shape:
            raise CheckpointError(f"buffer {key!r} shape mismatch")
        buf[...] = ck.tensors[key]


def restore_models(ck):
    """Rebuild the model list recorded in a checkpoint."""
    n_unique = 1 if ck.share_weights else ck.n_cascades
    models = []
    for i in range(n_unique):
        model = build_wcnn(ck.wcnn, seed=ck.seed)
        _load_into(model, ck, f"wcnn{i}.")
        models.append(model)
    if ck.share_weights:
        models = models * ck.n_cascades
    expected = set(ck.tensors)
    seen = set()
    for i, model in enumerate(_unique_models(models, ck.share_weights)):
        prefix = f"wcnn{i}."
        for name in model.named_parameters():
            seen.update({prefix + name, f"adam.m.{prefix}{name}", f"adam.v.{prefix}{name}"})
        seen.update(prefix + name for name in model.named_buffers())
    extra = expected - seen
    if extra:
        raise CheckpointError(f"checkpoint holds unexpected tensors: {sorted(extra)[:4]}")
    return models


def init_cascade_from_standalone(ck, n_cascades):
    """Start every cascade block from the standalone weights (independent
    deep copies, fresh optimizer state)."""
    if ck.mode != "standalone":
        raise CheckpointError(f"expected a standalone checkpoint, got mode {ck.mode!r}")
    if n_cascades < 1:
        raise ValueError(f"n_cascades must be >= 1, got {n_cascades}")
    models = []
    for _ in range(n_cascades):
        model = build_wcnn(ck.wcnn, seed=ck.seed)
        params = model.named_parameters()
        for name, p in params.items():
            key = f"wcnn0.{name}"
            if key not in ck.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {key!r}")
            if ck.tensors[key].shape != p.data.shape:
                raise CheckpointError(f"tensor {key!r} does not fit this architecture")
            p.data[...] = ck.tensors[key]
            p.m[...] = 0.0
            p.v[...] = 0.0
            p.t = 0
        for name, buf in model.named_buffers().items():
            key = f"wcnn0.{name}"
            if key not in ck.tensors:
                raise CheckpointError(f"checkpoint is missing buffer {key!r}")
            buf[...] = ck.tensors[key]
        models.append(model)
    return models


# ---------------------------------------------------------------------------
# binary container


def _meta_json(ck):
    lam = "inf" if math.isinf(ck.fidelity_lam) else ck.fidelity_lam
    return {
        "mode": ck.mode,
        "wcnn": ck.wcnn.to_dict(),
        "n_cascades": ck.n_cascades,
        "fidelity_lam": lam,
        "share_weights": ck.share_weights,
        "epoch": ck.epoch,
        "seed": ck.seed,
        "adam_t": ck.adam_t,
    }


def save_checkpoint(ck, path):
    meta = json.dumps(_meta_json(ck), sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(meta)), meta]
    for name in sorted(ck.tensors):
        arr = np.ascontiguousarray(ck.tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Cursor:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos})")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    @property
    def exhausted(self):
        return self.pos == len(self.blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob, path)
    if cur.take(4, "magic") != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = cur.u32("version")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    meta_len = cur.u32("metadata length")
    try:
        meta = json.loads(cur.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from exc
    tensors = {}
    while not cur.exhausted:
        name_len = cur.u32("tensor name length")
        name = cur.take(name_len, "tensor name").decode("utf-8")
        rank = cur.u32("tensor rank")
        if rank > _MAX_RANK:
            raise CheckpointError(f"{path}: tensor {name!r} has rank {rank}")
        shape = struct.unpack(f"<{rank}I", cur.take(4 * rank, "tensor extents"))
        n_elems = int(np.prod(shape, dtype=np.int64)) if rank else 1
        if n_elems <= 0 or n_elems > _MAX_ELEMS:
            raise CheckpointError(f"{path}: tensor {name!r} has {n_elems} elements")
        payload = cur.take(4 * n_elems, f"tensor {name!r} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    try:
        lam = meta["fidelity_lam"]
        ck = Checkpoint(
            mode=meta["mode"],
            wcnn=WCNNConfig.from_dict(meta["wcnn"]),
            n_cascades=int(meta["n_cascades"]),
            fidelity_lam=math.inf if lam == "inf" else float(lam),
            share_weights=bool(meta["share_weights"]),
            epoch=int(meta["epoch"]),
            seed=int(meta["seed"]),
            tensors=tensors,
            adam_t={k: int(v) for k, v in meta["adam_t"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed metadata ({exc})") from exc
    if ck.mode not in ("standalone", "cascade"):
        raise CheckpointError(f"{path}: unknown mode {ck.mode!r}")
    return ck
