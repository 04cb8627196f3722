"""Image quality metrics (NMSE, PSNR, SSIM, HFEN) and the paired
Wilcoxon signed-rank test.

All accumulation runs in float64 regardless of input dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d, correlate

from .ioutil import atomic_write_text

__all__ = [
    "nmse",
    "psnr",
    "ssim",
    "hfen",
    "wilcoxon_signed_rank",
    "WilcoxonResult",
    "MetricReport",
    "METRIC_NAMES",
    "write_report_csv",
    "read_report_csv",
]

METRIC_NAMES = ("nmse", "psnr", "ssim", "hfen")


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def nmse(pred, target):
    """||target - pred||^2 / ||target||^2."""
    pred, target = _pair(pred, target)
    den = np.sum(target * target)
    if den == 0:
        raise ValueError("nmse: target has zero norm")
    return float(np.sum(np.square(target - pred)) / den)


def psnr(pred, target, data_range):
    """10*log10(data_range^2 / MSE), +inf when the images are identical."""
    pred, target = _pair(pred, target)
    mse = float(np.mean(np.square(target - pred)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(float(data_range) ** 2 / mse)


_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


def _gaussian_kernel(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def ssim(pred, target, data_range):
    """Mean local structural similarity, 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03; the local window statistics use full-overlap positions
    only."""
    pred, target = _pair(pred, target)
    if min(pred.shape) < _SSIM_WIN:
        raise ValueError(f"ssim: image smaller than the {_SSIM_WIN}x{_SSIM_WIN} window")
    g = _gaussian_kernel(_SSIM_WIN, _SSIM_SIGMA)
    r = _SSIM_WIN // 2

    def win(a):
        t = convolve1d(a, g, axis=0, mode="constant")
        t = convolve1d(t, g, axis=1, mode="constant")
        return t[r:-r, r:-r]

    mu1, mu2 = win(pred), win(target)
    s11 = win(pred * pred) - mu1 * mu1
    s22 = win(target * target) - mu2 * mu2
    s12 = win(pred * target) - mu1 * mu2
    c1 = (0.01 * float(data_range)) ** 2
    c2 = (0.03 * float(data_range)) ** 2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


_HFEN_SIZE = 15
_HFEN_SIGMA = 1.5


def _log_kernel():
    r = _HFEN_SIZE // 2
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    rsq = xx * xx + yy * yy
    s2 = _HFEN_SIGMA ** 2
    k = (rsq - 2 * s2) / (s2 * s2) * np.exp(-rsq / (2 * s2))
    return k - k.mean()  # zero-sum kernel: constant offsets vanish exactly


_LOG_KERNEL = _log_kernel()


def hfen(pred, target):
    """Relative L2 error of Laplacian-of-Gaussian responses (15x15, sigma 1.5,
    reflective boundary)."""
    pred, target = _pair(pred, target)
    lt = correlate(target, _LOG_KERNEL, mode="reflect")
    lp = correlate(pred, _LOG_KERNEL, mode="reflect")
    den = float(np.linalg.norm(lt))
    if den == 0.0:
        raise ValueError("hfen: target has zero high-frequency content")
    return float(np.linalg.norm(lt - lp) / den)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences (W+)
    p_value: float
    significant: bool


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks, wplus):
    # distribution of W+ over all sign assignments via convolution on
    # half-integer rank sums (scaled x2 to stay integral)
    scaled = np.round(ranks * 2).astype(int)
    total = int(scaled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    upto = 0
    for r in scaled:
        nxt = counts.copy()
        nxt[r : upto + r + 1] += counts[: upto + 1]
        counts = nxt
        upto += r
    counts /= counts.sum()
    w2 = int(round(wplus * 2))
    p_le = counts[: w2 + 1].sum()
    p_ge = counts[w2:].sum()
    return min(1.0, 2.0 * min(p_le, p_ge))


def wilcoxon_signed_rank(a, b, alpha=0.05):
    """Two-sided paired test on (a - b).

    Zero differences are dropped. Fewer than 20 informative pairs use the
    exact sign-assignment distribution; 20 or more use the normal
    approximation with tie correction. At least 6 informative pairs are
    required, except that all-zero differences report p=1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("wilcoxon: inputs must be equal-length 1-D sequences")
    if alpha < 0 or alpha > 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, significant=False)
    if n < 6:
        raise ValueError(f"wilcoxon: need >= 6 nonzero differences, got {n}")
    absd = np.abs(d)
    ranks = _average_ranks(absd)
    wplus = float(ranks[d > 0].sum())
    if n < 20:
        p = _exact_two_sided_p(ranks, wplus)
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(absd, return_counts=True)
        var -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
        z = (wplus - mu) / math.sqrt(var)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(statistic=wplus, p_value=p, significant=p < alpha)


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass
class MetricReport:
    """Per-image metric rows plus mean/std aggregates (sample std, ddof=1)."""

    rows: list  # (image_id, {metric: value})

    def aggregate(self):
        out = {}
        for name in METRIC_NAMES:
            vals = np.array([r[1][name] for r in self.rows], dtype=np.float64)
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[name] = (float(vals.mean()), std)
        return out


def _fmt(v):
    return f"{v:.10g}"


def write_report_csv(path, report, extra_aggregates=()):
    """Write id,nmse,psnr,ssim,hfen rows, then mean/std rows; extra aggregate
    sections append as (label, {metric: (mean, std)})."""
    lines = ["id," + ",".join(METRIC_NAMES)]
    for image_id, vals in report.rows:
        lines.append(image_id + "," + ",".join(_fmt(vals[m]) for m in METRIC_NAMES))
    agg = report.aggregate()
    lines.append("mean," + ",".join(_fmt(agg[m][0]) for m in METRIC_NAMES))
    lines.append("std," + ",".join(_fmt(agg[m][1]) for m in METRIC_NAMES))
    for label, stats in extra_aggregates:
        lines.append(f"{label}_mean," + ",".join(_fmt(stats[m][0]) for m in METRIC_NAMES))
        lines.append(f"{label}_std," + ",".join(_fmt(stats[m][1]) for m in METRIC_NAMES))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_report_csv(path):
    """Parse a report written by :func:`write_report_csv`.

    Returns (rows, aggregates) where aggregates maps row label
    ('mean', 'std', '<label>_mean', ...) to {metric: value}.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if header != ["id", *METRIC_NAMES]:
        raise ValueError(f"report {path}: unexpected header {lines[0]!r}")
    rows = []
    aggregates = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 1 + len(METRIC_NAMES):
            raise ValueError(f"report {path}: bad row {ln!r}")
        label = parts[0]
        vals = {m: float(v) for m, v in zip(METRIC_NAMES, parts[1:])}
        if label == "mean" or label == "std" or label.endswith("_mean") or label.endswith("_std"):
            aggregates[label] = vals
        else:
            rows.append((label, vals))
    return rows, aggregates
