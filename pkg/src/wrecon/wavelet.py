"""Orthonormal single-level 2D Haar transforms and the network layers built on them.

The transform pair is scaled so it is orthonormal: energy is conserved,
the inverse is the transpose, and therefore each layer's backward pass is
simply the opposite transform applied to the incoming gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, _node, as_tensor

__all__ = ["SubbandSet", "dwt2_haar", "iwt2_haar", "dwt_stack", "iwt_stack",
           "dwt_layer", "iwt_layer"]


@dataclass
class SubbandSet:
    """The four half-resolution Haar subbands of one decomposition level."""

    ll: np.ndarray  # approximation
    lh: np.ndarray  # horizontal detail
    hl: np.ndarray  # vertical detail
    hh: np.ndarray  # diagonal detail


def _check_even(shape):
    h, w = shape[-2], shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"Haar transform needs even spatial dims, got {h}x{w}")


def dwt2_haar(x):
    """Forward transform over the trailing two axes.

    Each non-overlapping 2x2 block [[a,b],[c,d]] maps to
    ll=(a+b+c+d)/2, lh=(a+b-c-d)/2, hl=(a-b+c-d)/2, hh=(a-b-c+d)/2.
    """
    x = np.asarray(x)
    _check_even(x.shape)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return SubbandSet(
        ll=(a + b + c + d) * 0.5,
        lh=(a + b - c - d) * 0.5,
        hl=(a - b + c - d) * 0.5,
        hh=(a - b - c + d) * 0.5,
    )


def iwt2_haar(s):
    """Exact inverse of :func:`dwt2_haar`."""
    ll, lh, hl, hh = s.ll, s.lh, s.hl, s.hh
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError("iwt2_haar: subbands must share one shape")
    shape = list(ll.shape)
    shape[-2] *= 2
    shape[-1] *= 2
    out = np.empty(shape, dtype=np.result_type(ll, lh, hl, hh))
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def dwt_stack(x):
    """[N,C,H,W] -> [N,4C,H/2,W/2]; subband blocks ordered LL|LH|HL|HH."""
    s = dwt2_haar(x)
    return np.concatenate([s.ll, s.lh, s.hl, s.hh], axis=1)


def iwt_stack(x):
    """Inverse of :func:`dwt_stack` for channel counts divisible by 4."""
    c = x.shape[1]
    if c % 4:
        raise ShapeError(f"iwt_stack: channel count {c} not divisible by 4")
    q = c // 4
    return iwt2_haar(
        SubbandSet(ll=x[:, :q], lh=x[:, q : 2 * q], hl=x[:, 2 * q : 3 * q], hh=x[:, 3 * q :])
    )


def dwt_layer(x):
    """Differentiable subband stacking; backward is the inverse stacking."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"dwt_layer: input must be [N,C,H,W], got {x.data.shape}")
    _check_even(x.data.shape)
    out = dwt_stack(x.data)

    def bwd(g):
        return (iwt_stack(g),)

    return _node(out, (x,), bwd, "dwt")


def iwt_layer(x):
    """Differentiable subband recomposition; backward is the forward stacking."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"iwt_layer: input must be [N,C,H,W], got {x.data.shape}")
    out = iwt_stack(x.data)

    def bwd(g):
        return (dwt_stack(g),)

    return _node(out, (x,), bwd, "iwt")
