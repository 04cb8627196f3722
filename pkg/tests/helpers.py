"""Shared test utilities: gradient-check metrics and oracles."""

import numpy as np

from wrecon.autodiff import Tensor, backward, finite_difference_grad


def rel_err(a, b, clamp=1e-6):
    """Elementwise |a-b| / max(|a|, |b|, clamp)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), clamp)


def check_param_grads(make_loss, tensors, h=1e-3):
    """Backprop the loss once, then compare each tensor's grad against the
    central-difference oracle. ``make_loss`` rebuilds the graph from the
    tensors' current .data. Returns the stacked relative errors."""
    for t in tensors:
        t.grad = None if not hasattr(t, "m") else t.grad
        if t.grad is not None:
            t.grad[...] = 0
    loss = make_loss()
    backward(loss)
    errs = []
    for t in tensors:
        ad = t.grad.astype(np.float64).copy()

        def f(v, t=t):
            old = t.data.copy()
            t.data[...] = v
            val = float(make_loss().data)
            t.data[...] = old
            return val

        fd = finite_difference_grad(f, t.data, h)
        errs.append(rel_err(ad, fd).ravel())
        t.grad = np.zeros_like(t.data) if t.grad is None else t.grad
        t.grad[...] = 0
    return np.concatenate(errs)


def assert_grad_match(errors, frac_tol=0.05, worst_tol=5e-2, frac_level=1e-2):
    errors = np.asarray(errors)
    frac_bad = float(np.mean(errors > frac_level))
    worst = float(errors.max())
    assert frac_bad <= frac_tol, f"{frac_bad:.3%} of elements exceed {frac_level} rel err"
    assert worst <= worst_tol, f"worst rel err {worst:.4f} exceeds {worst_tol}"


def random_projection_loss(out, rng):
    """sum(out * R) for a fixed random R: a generic scalar head for FD checks."""
    from wrecon.autodiff import mul, sum_all

    r = rng.uniform(-1.0, 1.0, out.data.shape).astype(out.data.dtype)
    return sum_all(mul(out, Tensor(r)))


def direct_dft2c(x):
    """O(N^4) centered orthonormal 2D DFT oracle in float64/complex128."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    ch, cw = h // 2, w // 2
    for k in range(h):
        for l in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    phase = -2.0j * np.pi * ((k - ch) * (m - ch) / h + (l - cw) * (n - cw) / w)
                    acc += x[m, n] * np.exp(phase)
            out[k, l] = acc / np.sqrt(h * w)
    return out


def smooth_margin_models(cfg, n_models, seed):
    """Cascade blocks tuned so every ReLU input sits well away from zero:
    small BN gains and positive shifts keep the forward smooth across
    finite-difference stencils."""
    from wrecon.model import build_wcnn

    models = [build_wcnn(cfg, seed=seed + i) for i in range(n_models)]
    r = np.random.default_rng(seed + 777)
    for mo in models:
        for name, p in mo.named_parameters().items():
            if name.endswith(".gamma"):
                p.data[...] = r.uniform(0.1, 0.2, p.data.shape)
            elif name.endswith(".beta"):
                p.data[...] = r.uniform(0.5, 0.8, p.data.shape)
    return models
