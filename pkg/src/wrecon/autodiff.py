"""Reverse-mode automatic differentiation over dense float32 arrays.

A :class:`Tensor` wraps a numpy float32 array and records the operation
that produced it, so a scalar loss can be backpropagated through any
composition of the primitives defined here (conv2d, batchnorm2d, relu,
add, mul, sum_all, scale, mse_loss). Feature maps use NCHW layout.

Production code always runs in float32. The gradient-verification tests
may switch the engine to float64 via :func:`default_dtype`, because
central differences at h=1e-3 cannot resolve small derivatives through a
float32 forward pass (the forward rounding noise floor is ~1e-3 on the
difference quotient).
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "no_grad",
    "default_dtype",
    "add",
    "mul",
    "scale",
    "relu",
    "sum_all",
    "conv2d",
    "batchnorm2d",
    "mse_loss",
    "backward",
    "adam_step",
    "finite_difference_grad",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_grad_enabled = True
_dtype = np.float32


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    global _dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("engine dtype must be float32 or float64")
    prev = _dtype
    _dtype = dtype
    try:
        yield
    finally:
        _dtype = prev


class no_grad:
    """Context manager that disables graph construction (eval-mode forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Graph node: a float32 value, its gradient, and the producing op.

    ``grad`` is ``None`` until the node first receives a gradient; after
    ``backward()`` it holds d(loss)/d(value) for every reachable node and
    accumulates across repeated backward calls.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data, dtype=_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None


class Parameter(Tensor):
    """Trainable tensor carrying Adam state (first/second moments, step count)."""

    __slots__ = ("m", "v", "t", "name")

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True, op="param")
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.t = 0
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0


def _node(data, parents, backward_fn, op):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / reduction primitives


def add(a, b):
    """Elementwise sum; gradients pass through unchanged to both operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        return g, g

    return _node(a.data + b.data, (a, b), bwd, "add")


def mul(a, b):
    """Elementwise (Hadamard) product of equal-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g * bd, g * ad

    return _node(ad * bd, (a, b), bwd, "mul")


def scale(x, s):
    """Multiply by a python scalar."""
    x = as_tensor(x)
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _node(x.data * s, (x,), bwd, "scale")


def relu(x):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return _node(out, (x,), bwd, "relu")


def sum_all(x):
    """Sum of all elements, as a scalar node."""
    x = as_tensor(x)
    shape = x.data.shape
    dt = x.data.dtype

    def bwd(g):
        return (np.full(shape, g, dtype=dt),)

    return _node(x.data.sum(), (x,), bwd, "sum")


def mse_loss(pred, target):
    """Mean over the batch (axis 0) of per-sample squared L2 norms."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    if pred.data.ndim < 1:
        raise ShapeError("mse_loss: operands must have a batch axis")
    n = pred.data.shape[0]
    diff = pred.data - target.data
    val = np.sum(np.square(diff)) / n

    def bwd(g):
        gd = (2.0 * g / n) * diff
        return gd, -gd

    return _node(val, (pred, target), bwd, "mse")


# ---------------------------------------------------------------------------
# convolution

# im2col patch layout is [N*H*W, 9*Cin] with kernel-offset major order, so
# the producing copies and the col2im scatter both run along contiguous
# channel slabs (NHWC scratch) instead of strided gathers.


def _im2col3x3(x):
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1 : h + 1, 1 : w + 1, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n, h, w, 9, c), dtype=x.dtype)
    for idx in range(9):
        ki, kj = divmod(idx, 3)
        cols[:, :, :, idx, :] = xp[:, ki : ki + h, kj : kj + w, :]
    return cols.reshape(n * h * w, 9 * c)


def _col2im3x3(gcols, n, c, h, w):
    g5 = gcols.reshape(n, h, w, 9, c)
    gp = np.zeros((n, h + 2, w + 2, c), dtype=gcols.dtype)
    for idx in range(9):
        ki, kj = divmod(idx, 3)
        gp[:, ki : ki + h, kj : kj + w, :] += g5[:, :, :, idx, :]
    return np.ascontiguousarray(gp[:, 1 : h + 1, 1 : w + 1, :].transpose(0, 3, 1, 2))


def conv2d(x, weight, bias):
    """3x3 convolution, stride 1, zero padding 1 (spatial dims preserved).

    x: [N, Cin, H, W], weight: [Cout, Cin, 3, 3], bias: [Cout].
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be [N,C,H,W], got {x.data.shape}")
    if weight.data.ndim != 4 or weight.data.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: weight must be [Cout,Cin,3,3], got {weight.data.shape}")
    n, cin, h, w = x.data.shape
    cout = weight.data.shape[0]
    if weight.data.shape[1] != cin:
        raise ShapeError(
            f"conv2d: input has {cin} channels but weight expects {weight.data.shape[1]}"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias must be [{cout}], got {bias.data.shape}")

    cols = _im2col3x3(x.data)
    # kernel-offset-major weight matrix matches the cols layout
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(cout, 9 * cin)
    out2 = cols @ wmat.T
    out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, h, w, cout).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h * w, cout)
        gw = (g2.T @ cols).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0)
        gx = _col2im3x3(g2 @ wmat, n, cin, h, w)
        return gx, np.ascontiguousarray(gw), gb

    return _node(out, (x, weight, bias), bwd, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm2d(x, gamma, beta, running_mean, running_var, *, training,
                eps=1e-5, momentum=0.1):
    """Per-channel normalization over (N, H, W).

    Train mode uses batch statistics and updates ``running_mean`` /
    ``running_var`` in place (unbiased variance, torch-style momentum).
    Eval mode normalizes with the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d: input must be [N,C,H,W], got {x.data.shape}")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("batchnorm2d: gamma/beta must have one entry per channel")
    m = n * h * w
    if training:
        if m < 2:
            raise ShapeError("batchnorm2d: train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * np.asarray(mean, dtype=running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * np.asarray(var * (m / (m - 1)), dtype=running_var.dtype)
    else:
        mean = running_mean
        var = running_var

    ivar = np.asarray(1.0 / np.sqrt(var + eps), dtype=x.data.dtype)
    mean = np.asarray(mean, dtype=x.data.dtype)
    xhat = (x.data - mean[None, :, None, None]) * ivar[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    gdat = gamma.data

    def bwd(g):
        dgamma = np.einsum("nchw,nchw->c", g, xhat)
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gdat[None, :, None, None]
        if training:
            t1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            t2 = np.einsum("nchw,nchw->c", dxhat, xhat)[None, :, None, None]
            dx = (ivar[None, :, None, None] / m) * (m * dxhat - t1 - xhat * t2)
        else:
            dx = dxhat * ivar[None, :, None, None]
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), bwd, "batchnorm2d")


# ---------------------------------------------------------------------------
# backward pass and optimizer


def backward(loss):
    """Backpropagate from a scalar node.

    Reverse-topological traversal; every reachable node's ``grad``
    accumulates d(loss)/d(value), so repeated calls without zeroing add up.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    # gradients for this pass travel in a side table and are folded into
    # .grad at visit time, which keeps repeated backward calls additive
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in pending:
                # out of place: backward rules may hand the same array to
                # several parents (add), so stored messages are never mutated
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update on each parameter; gradients are then zeroed."""
    for p in params:
        g = p.grad
        p.t += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * np.square(g)
        mhat = p.m / (1.0 - beta1 ** p.t)
        vhat = p.v / (1.0 - beta2 ** p.t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
        p.grad[...] = 0.0


def finite_difference_grad(f, x, h=1e-3):
    """Central-difference gradient of a scalar function, element by element.

    ``f`` maps an ndarray shaped like ``x`` to a float and must be
    deterministic; the result is float64. This is the independent oracle
    the gradient tests compare ``backward()`` against.
    """
    if h <= 0:
        raise ValueError("finite_difference_grad: h must be positive")
    x = np.asarray(x)
    out = np.zeros(x.shape, dtype=np.float64)
    flat = out.reshape(-1)
    xw = x.copy()
    xf = xw.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = float(f(xw))
        xf[i] = orig - h
        fm = float(f(xw))
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return out
