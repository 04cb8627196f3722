"""Synthetic phantoms with controllable fine structure, paired
undersampled/target datasets, and image file I/O (raw float32 and PNG)."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kspace
from .ioutil import atomic_output, atomic_write_bytes, atomic_write_text

__all__ = [
    "Phantom",
    "DatasetItem",
    "PairedDataset",
    "gen_phantoms",
    "build_dataset",
    "save_image_f32",
    "load_image_f32",
    "export_png",
    "load_png",
    "load_image",
    "write_manifest",
    "read_manifest",
]


@dataclass
class Phantom:
    image: np.ndarray  # float32 [H, W], values in [0, 1]
    primitives: list = field(default_factory=list)


def _add_ellipse(canvas, xx, yy, rng, max_axis, intensity):
    h, w = canvas.shape
    cy = rng.uniform(0.3, 0.7) * h
    cx = rng.uniform(0.3, 0.7) * w
    ay = rng.uniform(0.12, max_axis) * h
    ax = rng.uniform(0.12, max_axis) * w
    theta = rng.uniform(0.0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    u = (xx - cx) * ct + (yy - cy) * st
    v = -(xx - cx) * st + (yy - cy) * ct
    inside = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
    canvas[inside] += intensity
    return {"kind": "ellipse", "center": (cy, cx), "axes": (ay, ax),
            "angle": float(theta), "intensity": float(intensity)}


def _add_line(canvas, rng, intensity):
    h, w = canvas.shape
    r0 = rng.uniform(0.2, 0.8) * h
    c0 = rng.uniform(0.2, 0.8) * w
    angle = rng.uniform(0.0, np.pi)
    length = rng.uniform(0.12, 0.35) * min(h, w)
    width = int(rng.integers(1, 3))
    t = np.linspace(0.0, 1.0, int(length * 4) + 2)
    rr = np.clip(np.round(r0 + t * length * np.sin(angle)).astype(int), 0, h - 1)
    cc = np.clip(np.round(c0 + t * length * np.cos(angle)).astype(int), 0, w - 1)
    for dr in range(width):
        for dc in range(width):
            canvas[np.clip(rr + dr, 0, h - 1), np.clip(cc + dc, 0, w - 1)] += intensity
    return {"kind": "line", "start": (float(r0), float(c0)), "angle": float(angle),
            "length": float(length), "width": width, "intensity": float(intensity)}


def _add_dot(canvas, rng, intensity):
    h, w = canvas.shape
    r = int(rng.integers(2, h - 3))
    c = int(rng.integers(2, w - 3))
    size = int(rng.integers(1, 3))
    canvas[r : r + size, c : c + size] += intensity
    return {"kind": "dot", "pos": (r, c), "size": size, "intensity": float(intensity)}


def gen_phantoms(count, h, w, seed, fine_detail_density=1.0):
    """Deterministic phantoms: smooth overlapping ellipses plus thin
    (1-2 px) high-contrast lines and dots whose count scales with
    ``fine_detail_density``. Values are clamped to [0, 1]."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if h % 2 or w % 2:
        raise ValueError(f"phantom dims must be even, got {h}x{w}")
    if fine_detail_density < 0:
        raise ValueError("fine_detail_density must be >= 0")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    n_lines = int(round(4 * fine_detail_density))
    n_dots = int(round(6 * fine_detail_density))
    phantoms = []
    for ss in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.Generator(np.random.PCG64(ss))
        canvas = np.zeros((h, w), dtype=np.float64)
        prims = []
        prims.append(_add_ellipse(canvas, xx, yy, rng, 0.42, rng.uniform(0.25, 0.4)))
        for _ in range(int(rng.integers(2, 6))):
            prims.append(_add_ellipse(canvas, xx, yy, rng, 0.3,
                                      rng.uniform(-0.25, 0.35)))
        canvas = np.clip(canvas, 0.0, 0.85)
        for _ in range(n_lines):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            prims.append(_add_line(canvas, rng, sign * rng.uniform(0.3, 0.5)))
        for _ in range(n_dots):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            prims.append(_add_dot(canvas, rng, sign * rng.uniform(0.3, 0.5)))
        phantoms.append(Phantom(image=np.clip(canvas, 0.0, 1.0).astype(np.float32),
                                primitives=prims))
    return phantoms


# ---------------------------------------------------------------------------
# paired dataset


@dataclass
class DatasetItem:
    id: str
    target: np.ndarray  # float32 [H, W]
    zero_filled: np.ndarray  # float32 [H, W], real part of the aliased image


@dataclass
class PairedDataset:
    items: list
    mask: kspace.SamplingMask
    split: str

    def __len__(self):
        return len(self.items)

    def ids(self):
        return [it.id for it in self.items]


def make_item(image_id, target, mask):
    y = kspace.undersample(target, mask)
    xu = kspace.zero_filled(y, mask).real.astype(np.float32)
    return DatasetItem(id=image_id, target=np.asarray(target, dtype=np.float32),
                       zero_filled=xu)


def build_dataset(images, mask, split_ratio, seed):
    """Deterministic shuffle/split of (id, image) pairs into train and val
    sets; the aliased input of every item is recomputed from its target
    through the one shared mask."""
    if not 0 < split_ratio < 1:
        raise ValueError(f"split_ratio must lie in (0, 1), got {split_ratio}")
    pairs = []
    for idx, entry in enumerate(images):
        if isinstance(entry, Phantom):
            pairs.append((f"phantom_{idx:04d}", entry.image))
        else:
            pairs.append(entry)
    if not pairs:
        raise ValueError("build_dataset: no images given")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(len(pairs))
    n_train = min(max(int(round(split_ratio * len(pairs))), 1), len(pairs) - 1)
    train_idx = sorted(perm[:n_train].tolist())
    val_idx = sorted(perm[n_train:].tolist())
    train = PairedDataset(
        items=[make_item(pairs[i][0], pairs[i][1], mask) for i in train_idx],
        mask=mask, split="train")
    val = PairedDataset(
        items=[make_item(pairs[i][0], pairs[i][1], mask) for i in val_idx],
        mask=mask, split="val")
    return train, val


# ---------------------------------------------------------------------------
# raw float32 image format: magic IMGF, u32 version, u32 H, u32 W, H*W f32 LE

_IMGF_MAGIC = b"IMGF"
_IMGF_VERSION = 1
_MAX_PIXELS = 1 << 28


def save_image_f32(img, path):
    img = np.ascontiguousarray(img, dtype="<f4")
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    header = _IMGF_MAGIC + struct.pack("<III", _IMGF_VERSION, h, w)
    atomic_write_bytes(path, header + img.tobytes())


def load_image_f32(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != _IMGF_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    version, h, w = struct.unpack("<III", blob[4:16])
    if version != _IMGF_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if h == 0 or w == 0 or h * w > _MAX_PIXELS:
        raise ValueError(f"{path}: unreasonable dimensions {h}x{w}")
    expected = 16 + 4 * h * w
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w).copy()


def export_png(img, path, window=(0.0, 1.0)):
    """8-bit grayscale PNG with linear windowing: ``lo`` maps to black,
    ``hi`` to white, values outside clamp."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError(f"invalid window: lo={lo} must be < hi={hi}")
    img = np.asarray(img, dtype=np.float64)
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    with atomic_output(path) as tmp:
        Image.fromarray(pix, mode="L").save(tmp, format="PNG")


def load_png(path):
    """Grayscale PNG to float32 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr.astype(np.float32)


def load_image(path):
    """Dispatch on extension: .imgf raw float32, .png grayscale PNG."""
    p = str(path)
    if p.endswith(".imgf"):
        return load_image_f32(p)
    if p.endswith(".png"):
        return load_png(p)
    raise ValueError(f"unsupported image format: {p}")


# ---------------------------------------------------------------------------
# dataset manifest


def write_manifest(path, manifest):
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("seed", "items"):
        if key not in manifest:
            raise ValueError(f"manifest {path}: missing key {key!r}")
    return manifest
