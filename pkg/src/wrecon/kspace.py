"""k-space simulation: centered orthonormal FFTs, Cartesian sampling masks,
zero-filled reconstruction and the measurement-consistency (data fidelity)
operator.

Images are treated as real-valued magnitude images: they enter k-space with
zero imaginary part and the real part is taken after every inverse
transform. To make that convention self-consistent (so measurement rows of
a real image survive the final real-part projection intact) the generated
masks keep rows in conjugate-symmetric pairs about DC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_text

__all__ = [
    "SamplingMask",
    "FidelityConfig",
    "INFINITE",
    "fft2c",
    "ifft2c",
    "generate_mask",
    "undersample",
    "zero_filled",
    "data_fidelity",
    "save_mask",
    "load_mask",
]

INFINITE = math.inf


def fft2c(x):
    """Centered, orthonormal 2D DFT over the trailing two axes (DC at center)."""
    x = np.asarray(x)
    if not np.iscomplexobj(x):
        x = x.astype(np.complex128 if x.dtype == np.float64 else np.complex64)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), axes=(-2, -1), norm="ortho"),
        axes=(-2, -1),
    )


def ifft2c(y):
    """Inverse of :func:`fft2c`."""
    y = np.asarray(y)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(y, axes=(-2, -1)), axes=(-2, -1), norm="ortho"),
        axes=(-2, -1),
    )


@dataclass(frozen=True)
class SamplingMask:
    """Cartesian row mask over a centered k-space grid of height ``height``."""

    rows: np.ndarray  # bool [H]; True = row acquired
    acceleration: float
    center_lines: int
    sigma_frac: float
    seed: int

    @property
    def height(self):
        return self.rows.shape[0]

    @property
    def n_kept(self):
        return int(self.rows.sum())

    def plane(self, width):
        """Boolean [H, width] plane with whole rows kept or dropped."""
        return np.repeat(self.rows[:, None], width, axis=1)


def _mirror(i, h):
    # reflection about the DC row of the centered grid
    return (2 * (h // 2) - i) % h


def generate_mask(h, acceleration, center_lines, sigma_frac=0.15, seed=0):
    """Variable-density Cartesian mask keeping exactly round(h/acceleration) rows.

    The ``center_lines`` rows nearest DC are always kept; the remaining
    budget is filled by weighted sampling without replacement where a
    row's weight is the zero-mean Gaussian pdf (std ``sigma_frac * h``) of
    its centered offset. Rows are drawn in mirror pairs about DC so the
    kept set is conjugate-symmetric. Deterministic given ``seed``.
    """
    if h < 2:
        raise ValueError(f"mask height must be >= 2, got {h}")
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if sigma_frac <= 0:
        raise ValueError(f"sigma_frac must be positive, got {sigma_frac}")
    k_total = int(round(h / acceleration))
    if center_lines < 0 or center_lines > h // max(acceleration, 1):
        raise ValueError(
            f"center_lines={center_lines} exceeds floor(h/acceleration)={int(h // acceleration)}"
        )

    c = h // 2
    offsets = np.arange(h) - c
    by_distance = sorted(range(h), key=lambda i: (abs(offsets[i]), i))
    kept = set(by_distance[:center_lines])

    # complete the center block to a symmetric set, budget permitting
    for i in list(kept):
        j = _mirror(i, h)
        if j not in kept and len(kept) < k_total:
            kept.add(j)

    sigma = sigma_frac * h
    weights = np.exp(-0.5 * (offsets / sigma) ** 2)

    pairs = []  # (i, j) with i < j, both free
    selfrows = []  # rows that are their own mirror (DC, Nyquist)
    for i in range(h):
        j = _mirror(i, h)
        if i in kept or j in kept:
            continue
        if i == j:
            selfrows.append(i)
        elif i < j:
            pairs.append((i, j))

    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.random(len(pairs))
    # Efraimidis-Spirakis keys: top-k by u**(1/w) is a weighted draw
    # without replacement
    with np.errstate(over="ignore", divide="ignore"):
        keys = u ** (1.0 / np.maximum(weights[[p[0] for p in pairs]], 1e-300))
    order = sorted(range(len(pairs)), key=lambda t: (-keys[t], t))

    remaining = k_total - len(kept)
    if remaining % 2:
        filler = next((r for r in sorted(selfrows, key=lambda i: -weights[i])), None)
        if filler is not None:
            kept.add(filler)
            remaining -= 1
    idx = 0
    while remaining >= 2 and idx < len(order):
        i, j = pairs[order[idx]]
        kept.add(i)
        kept.add(j)
        remaining -= 2
        idx += 1
    while remaining > 0 and idx < len(order):
        # odd leftover with no free self row: take the near-DC pair member
        i, j = pairs[order[idx]]
        kept.add(i if abs(offsets[i]) <= abs(offsets[j]) else j)
        remaining -= 1
        idx += 1

    rows = np.zeros(h, dtype=bool)
    rows[sorted(kept)] = True
    return SamplingMask(
        rows=rows,
        acceleration=float(acceleration),
        center_lines=int(center_lines),
        sigma_frac=float(sigma_frac),
        seed=int(seed),
    )


def undersample(x, mask):
    """Measured k-space of an image: mask-selected rows of its centered spectrum."""
    x = np.asarray(x)
    if x.shape[0] != mask.height:
        raise ValueError(f"image height {x.shape[0]} does not match mask height {mask.height}")
    y = fft2c(x)
    y[~mask.rows, :] = 0
    return y.astype(np.complex64, copy=False)


def zero_filled(y, mask):
    """Inverse transform of measured k-space, unacquired rows left at zero."""
    del mask  # contract: y is already zero off the acquired set
    return ifft2c(y).astype(np.complex64, copy=False)


@dataclass(frozen=True)
class FidelityConfig:
    """Measurement blending weight. ``lam=INFINITE`` replaces outright;
    ``alpha`` is a recorded acquisition-noise weight, unused by the operator."""

    lam: float = INFINITE
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ValueError(f"lambda must be >= 0 or INFINITE, got {self.lam}")


def df_coefficients(lam):
    """Per-bin weights (w, s): corrected spectrum = w * predicted + s * measured
    on acquired rows, predicted elsewhere."""
    if math.isinf(lam):
        return 0.0, 1.0
    return 1.0 / (1.0 + lam), lam / (1.0 + lam)


def data_fidelity(x_pred, y, mask, cfg=FidelityConfig()):
    """Blend the prediction's spectrum with the measurements on acquired rows.

    ``x_pred`` is a real [H, W] image; the result is the real part of the
    inverse transform of the corrected spectrum.
    """
    x_pred = np.asarray(x_pred)
    if x_pred.shape != y.shape:
        raise ValueError(f"shape mismatch: image {x_pred.shape} vs measurements {y.shape}")
    if x_pred.shape[0] != mask.height:
        raise ValueError(f"image height {x_pred.shape[0]} does not match mask {mask.height}")
    w_on, s_on = df_coefficients(cfg.lam)
    xhat = fft2c(x_pred)
    xhat[mask.rows, :] *= w_on
    if s_on:
        xhat[mask.rows, :] += s_on * y[mask.rows, :]
    return ifft2c(xhat).real.astype(x_pred.dtype if x_pred.dtype == np.float64 else np.float32, copy=False)


# ---------------------------------------------------------------------------
# mask file format: one header line per field, then H space-separated 0/1 flags


def save_mask(mask, path):
    lines = [
        f"height {mask.height}",
        f"acceleration {mask.acceleration:.10g}",
        f"center_lines {mask.center_lines}",
        f"sigma_frac {mask.sigma_frac:.10g}",
        f"seed {mask.seed}",
        " ".join("1" if v else "0" for v in mask.rows),
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_mask(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) != 6:
        raise ValueError(f"mask file {path}: expected 6 lines, got {len(lines)}")
    header = {}
    for ln in lines[:5]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"mask file {path}: bad header line {ln!r}")
        header[parts[0]] = parts[1]
    try:
        h = int(header["height"])
        accel = float(header["acceleration"])
        center = int(header["center_lines"])
        sigma = float(header["sigma_frac"])
        seed = int(header["seed"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"mask file {path}: malformed header ({exc})") from exc
    flags = lines[5].split()
    if len(flags) != h or any(f not in ("0", "1") for f in flags):
        raise ValueError(f"mask file {path}: expected {h} 0/1 row flags")
    rows = np.array([f == "1" for f in flags], dtype=bool)
    return SamplingMask(rows=rows, acceleration=accel, center_lines=center,
                        sigma_frac=sigma, seed=seed)
