"""Wavelet-CNN encoder-decoder and its measurement-consistent cascade.

The network is a U-Net-shaped residual model whose down/up-sampling steps
are the orthonormal Haar stacking layers instead of pooling/unpooling.
Every contraction level runs a fully-convolutional block (conv3x3 -> BN ->
ReLU, ``block_depth`` times) and taps its output for an elementwise skip
into the matching expansion level. A final plain 3x3 convolution predicts
a residual that is added to the network input.

The deep-cascade variant alternates these blocks with data-fidelity units
that re-impose the acquired k-space rows; the fidelity unit is linear in
the image, so gradients flow through the whole cascade.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kspace
from .autodiff import (
    Parameter,
    ShapeError,
    Tensor,
    _node,
    add,
    as_tensor,
    batchnorm2d,
    conv2d,
    relu,
)
from .wavelet import dwt_layer, iwt_layer

__all__ = [
    "WCNNConfig",
    "CascadeConfig",
    "WCNNModel",
    "build_wcnn",
    "wcnn_forward",
    "data_fidelity_layer",
    "cascade_forward",
    "dcwcnn_forward",
]


@dataclass(frozen=True)
class WCNNConfig:
    levels: int = 3
    block_depth: int = 4
    base_channels: int = 16
    input_channels: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.block_depth < 1:
            raise ValueError(f"block_depth must be >= 1, got {self.block_depth}")
        if self.base_channels < 1 or self.input_channels < 1:
            raise ValueError("channel counts must be >= 1")

    def to_dict(self):
        return {"levels": self.levels, "block_depth": self.block_depth,
                "base_channels": self.base_channels,
                "input_channels": self.input_channels}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class CascadeConfig:
    n_cascades: int = 2
    fidelity: kspace.FidelityConfig = kspace.FidelityConfig()
    share_weights: bool = False

    def __post_init__(self):
        if self.n_cascades < 1:
            raise ValueError(f"n_cascades must be >= 1, got {self.n_cascades}")


def _block_widths(cfg):
    """Conv in/out channel chains for each block of the network.

    Contraction block k halves the 4x channel growth of the preceding
    stacking step (4c -> 2c); bottleneck and expansion blocks end on 4x
    the next tap width so the following recomposition lands exactly on it.
    """
    c = [cfg.base_channels * (1 << k) for k in range(cfg.levels)]
    d = cfg.block_depth

    def chain(cin, mid, cout, depth):
        if depth == 1:
            return [(cin, cout)]
        widths = [(cin, mid)] + [(mid, mid)] * (depth - 2) + [(mid, cout)]
        return widths

    contract = []
    for k in range(cfg.levels):
        cin = cfg.input_channels if k == 0 else 4 * c[k - 1]
        contract.append([(cin, c[k])] + [(c[k], c[k])] * (d - 1))
    bottleneck = chain(4 * c[-1], 2 * c[-1], 4 * c[-1], d)
    expand = []
    for k in range(cfg.levels - 1, -1, -1):
        if k == 0:
            expand.append([(c[0], c[0])] * d)
        else:
            expand.append([(c[k], c[k])] * (d - 1) + [(c[k], 4 * c[k - 1])])
    return contract, bottleneck, expand, c


class _ConvBN:
    """conv3x3 -> batchnorm -> relu unit."""

    def __init__(self, cin, cout, rng, name):
        s = 1.0 / np.sqrt(cin * 9)
        self.weight = Parameter(
            rng.uniform(-s, s, size=(cout, cin, 3, 3)).astype(np.float32),
            name=f"{name}.weight")
        self.bias = Parameter(np.zeros(cout, dtype=np.float32), name=f"{name}.bias")
        self.gamma = Parameter(np.ones(cout, dtype=np.float32), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(cout, dtype=np.float32), name=f"{name}.beta")
        self.running_mean = np.zeros(cout, dtype=np.float32)
        self.running_var = np.ones(cout, dtype=np.float32)
        self.name = name

    def forward(self, x, training):
        x = conv2d(x, self.weight, self.bias)
        x = batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                        self.running_var, training=training)
        return relu(x)


class _FCBlock:
    def __init__(self, widths, rng, name):
        self.units = [_ConvBN(cin, cout, rng, f"{name}.unit{i}")
                      for i, (cin, cout) in enumerate(widths)]

    def forward(self, x, training):
        for unit in self.units:
            x = unit.forward(x, training)
        return x


class WCNNModel:
    """Built by :func:`build_wcnn`; owns parameters and BN running stats."""

    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(seed))
        contract_w, bottleneck_w, expand_w, self._taps = _block_widths(cfg)
        self.contract = [_FCBlock(w, rng, f"contract{k}") for k, w in enumerate(contract_w)]
        self.bottleneck = _FCBlock(bottleneck_w, rng, "bottleneck")
        self.expand = [_FCBlock(w, rng, f"expand{cfg.levels - 1 - i}")
                       for i, w in enumerate(expand_w)]
        s = 1.0 / np.sqrt(cfg.base_channels * 9)
        self.final_weight = Parameter(
            rng.uniform(-s, s, size=(cfg.input_channels, cfg.base_channels, 3, 3))
            .astype(np.float32), name="final.weight")
        self.final_bias = Parameter(np.zeros(cfg.input_channels, dtype=np.float32),
                                    name="final.bias")

    # -- forward ------------------------------------------------------

    def forward(self, x, training=False):
        x = as_tensor(x)
        if x.data.ndim != 4 or x.data.shape[1] != self.cfg.input_channels:
            raise ShapeError(
                f"expected [N,{self.cfg.input_channels},H,W], got {x.data.shape}")
        h, w = x.data.shape[2:]
        div = 1 << self.cfg.levels
        if h % div or w % div:
            raise ShapeError(f"spatial dims {h}x{w} must be divisible by {div}")
        taps = []
        out = x
        for block in self.contract:
            out = block.forward(out, training)
            taps.append(out)
            out = dwt_layer(out)
        out = self.bottleneck.forward(out, training)
        for i, block in enumerate(self.expand):
            out = iwt_layer(out)
            out = add(out, taps[self.cfg.levels - 1 - i])
            out = block.forward(out, training)
        residual = conv2d(out, self.final_weight, self.final_bias)
        return add(x, residual)

    # -- parameter access ---------------------------------------------

    def _units(self):
        for block in [*self.contract, self.bottleneck, *self.expand]:
            yield from block.units

    def named_parameters(self):
        out = {}
        for unit in self._units():
            for p in (unit.weight, unit.bias, unit.gamma, unit.beta):
                out[p.name] = p
        out[self.final_weight.name] = self.final_weight
        out[self.final_bias.name] = self.final_bias
        return out

    def named_buffers(self):
        out = {}
        for unit in self._units():
            out[f"{unit.name}.running_mean"] = unit.running_mean
            out[f"{unit.name}.running_var"] = unit.running_var
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def n_parameters(self):
        return sum(p.data.size for p in self.parameters())


def build_wcnn(cfg, seed):
    """Deterministic model construction: conv weights uniform in
    +-1/sqrt(fan_in), biases zero, BN at identity."""
    return WCNNModel(cfg, seed)


def wcnn_forward(model, x, mode="eval"):
    """Residual forward pass: returns input + predicted correction."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return model.forward(x, training=(mode == "train"))


# ---------------------------------------------------------------------------
# data-fidelity layer and cascade


def data_fidelity_layer(x, y, mask, lam):
    """Differentiable fidelity unit on a batch.

    x: Tensor [N,1,H,W] real; y: complex measurements [N,H,W] (zero off the
    mask). The operator is linear and self-adjoint in the image for fixed
    measurements, so its backward pass reuses the same spectral weighting.
    """
    x = as_tensor(x)
    if x.data.ndim != 4 or x.data.shape[1] != 1:
        raise ShapeError(f"data_fidelity_layer expects [N,1,H,W], got {x.data.shape}")
    n, _, h, w = x.data.shape
    if y.shape != (n, h, w):
        raise ShapeError(f"measurements shaped {y.shape}, expected {(n, h, w)}")
    if h != mask.height:
        raise ShapeError(f"image height {h} does not match mask height {mask.height}")
    w_on, s_on = kspace.df_coefficients(lam)
    rows = mask.rows

    dt = x.data.dtype

    def apply_weights(img_batch):
        spec = kspace.fft2c(img_batch)
        spec[:, rows, :] *= w_on
        return spec

    spec = apply_weights(x.data[:, 0])
    if s_on:
        spec[:, rows, :] += s_on * y[:, rows, :]
    out = kspace.ifft2c(spec).real.astype(dt)[:, None]

    def bwd(g):
        gspec = apply_weights(g[:, 0])
        return (kspace.ifft2c(gspec).real.astype(dt)[:, None],)

    return _node(out, (x,), bwd, "data_fidelity")


def cascade_forward(models, x0, y, mask, lam, training=False):
    """Alternate reconstruction blocks and fidelity units, starting from the
    zero-filled image batch ``x0``."""
    x = as_tensor(x0)
    for model in models:
        x = model.forward(x, training=training)
        x = data_fidelity_layer(x, y, mask, lam)
    return x


def dcwcnn_forward(models, y, mask, cfg):
    """Single-image cascade reconstruction from measurements ``y`` [H,W]."""
    if len(models) != cfg.n_cascades:
        raise ValueError(
            f"cascade expects {cfg.n_cascades} blocks, got {len(models)} models")
    if y.shape[0] != mask.height:
        raise ValueError(f"measurements height {y.shape[0]} vs mask {mask.height}")
    x0 = kspace.zero_filled(y, mask).real.astype(np.float32)[None, None]
    return cascade_forward(models, Tensor(x0), y[None], mask, cfg.fidelity.lam,
                           training=False)
