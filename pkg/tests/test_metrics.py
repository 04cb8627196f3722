import itertools
import math

import numpy as np
import pytest
from scipy import stats as sstats

from wrecon.metrics import (
    METRIC_NAMES,
    MetricReport,
    hfen,
    nmse,
    psnr,
    read_report_csv,
    ssim,
    wilcoxon_signed_rank,
    write_report_csv,
)

RNG = np.random.default_rng(99)


# ---------------------------------------------------------------------------
# nmse


def test_nmse_cases():
    t = RNG.uniform(0.1, 1, (16, 16))
    assert nmse(t, t) == 0.0
    assert nmse(np.zeros_like(t), t) == pytest.approx(1.0)
    assert nmse(2 * t, t) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nmse(t, np.zeros_like(t))
    with pytest.raises(ValueError):
        nmse(t, t[:8])


def test_nmse_changes_under_constant_shift():
    t = RNG.uniform(0.1, 1, (16, 16))
    assert nmse(t + 0.1, t) > 0.0


# ---------------------------------------------------------------------------
# psnr


def test_psnr_identical_is_infinite():
    t = RNG.uniform(0, 1, (8, 8))
    assert math.isinf(psnr(t, t, data_range=1.0))


def test_psnr_uniform_error_closed_form():
    t = RNG.uniform(0, 1, (32, 32))
    assert psnr(t + 0.1, t, data_range=1.0) == pytest.approx(20.0, abs=1e-3)


def test_psnr_scale_covariance():
    t = RNG.uniform(0, 1, (16, 16))
    p = t + RNG.normal(0, 0.05, t.shape)
    for s in (2.0, 7.5):
        assert psnr(p, t, 1.0) == pytest.approx(psnr(s * p, s * t, s), rel=1e-10)


# ---------------------------------------------------------------------------
# ssim


def test_ssim_identical_is_one():
    t = RNG.uniform(0, 1, (32, 32))
    assert ssim(t, t, data_range=1.0) == pytest.approx(1.0, abs=1e-6)


def test_ssim_constant_images_closed_form():
    z = np.zeros((16, 16))
    o = np.ones((16, 16))
    c1 = 0.01 ** 2
    assert ssim(z, o, data_range=1.0) == pytest.approx(c1 / (1 + c1), rel=1e-6)


def test_ssim_sign_flip_is_negative():
    yy, xx = np.mgrid[0:32, 0:32]
    t = np.sin(xx * 1.1) * np.cos(yy * 0.7)  # locally zero-mean pattern
    assert ssim(-t, t, data_range=2.0) < 0.0


def test_ssim_small_image_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), data_range=1.0)


# ---------------------------------------------------------------------------
# hfen


def test_hfen_cases():
    t = RNG.uniform(0, 1, (32, 32))
    assert hfen(t, t) == 0.0
    assert hfen(t + 0.17, t) < 1e-5  # zero-sum kernel kills constant offsets
    assert hfen(np.zeros_like(t), t) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        hfen(np.ones((8, 8)), np.ones((8, 8)))  # flat target has no HF content


# ---------------------------------------------------------------------------
# wilcoxon


def brute_force_two_sided_p(d):
    """Enumerate all 2^n sign assignments of the ranked |d|."""
    d = np.asarray(d, dtype=np.float64)
    absd = np.abs(d)
    ranks = sstats.rankdata(absd)
    wplus = ranks[d > 0].sum()
    n = len(d)
    count_le = count_ge = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for s, r in zip(signs, ranks) if s)
        count_le += w <= wplus
        count_ge += w >= wplus
    total = 2 ** n
    return min(1.0, 2.0 * min(count_le / total, count_ge / total))


def test_wilcoxon_identical_inputs():
    a = RNG.uniform(0, 1, 10)
    res = wilcoxon_signed_rank(a, a.copy())
    assert res.p_value == 1.0 and not res.significant


def test_wilcoxon_dominant_n8_exact():
    a = np.arange(1.0, 9.0)
    b = a - 0.5  # a strictly greater everywhere
    res = wilcoxon_signed_rank(a, b, alpha=0.05)
    assert res.p_value == pytest.approx(2.0 / 256.0)
    assert res.significant
    assert res.p_value == pytest.approx(brute_force_two_sided_p(a - b))


def test_wilcoxon_alpha_zero_never_significant():
    a = np.arange(1.0, 9.0)
    res = wilcoxon_signed_rank(a, a - 1.0, alpha=0.0)
    assert not res.significant


def test_wilcoxon_exact_matches_brute_force():
    for seed in range(4):
        r = np.random.default_rng(seed)
        d = r.normal(0.3, 1.0, 10)
        d = d[d != 0]
        res = wilcoxon_signed_rank(d, np.zeros_like(d))
        assert res.p_value == pytest.approx(brute_force_two_sided_p(d), abs=1e-12)


def test_wilcoxon_exact_handles_ties():
    d = np.array([1.0, 1.0, -1.0, 2.0, 2.0, 3.0, -2.0, 0.5])
    res = wilcoxon_signed_rank(d, np.zeros_like(d))
    assert res.p_value == pytest.approx(brute_force_two_sided_p(d), abs=1e-12)


def test_wilcoxon_normal_branch_matches_scipy():
    for seed in range(4):
        r = np.random.default_rng(100 + seed)
        a = r.normal(0.2, 1.0, 30)
        b = r.normal(0.0, 1.0, 30)
        res = wilcoxon_signed_rank(a, b)
        ref = sstats.wilcoxon(a, b, correction=False, method="approx")
        assert res.p_value == pytest.approx(ref.pvalue, abs=1e-9)


def test_wilcoxon_exact_vs_normal_agree_near_cutoff():
    # the two branches agree within 0.01 at the n=20 switchover
    from wrecon.metrics import _average_ranks, _exact_two_sided_p

    for seed in range(6):
        r = np.random.default_rng(seed)
        d = r.normal(0.25, 1.0, 20)
        d = d[d != 0]
        if len(d) < 20:
            continue
        ranks = _average_ranks(np.abs(d))
        wplus = float(ranks[d > 0].sum())
        p_exact = _exact_two_sided_p(ranks, wplus)
        p_norm = wilcoxon_signed_rank(d, np.zeros_like(d)).p_value
        assert p_norm == pytest.approx(p_exact, abs=0.01)


def test_wilcoxon_validation():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0, 2.0], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])  # n < 6
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.arange(8.0), np.zeros(8), alpha=2.0)


# ---------------------------------------------------------------------------
# reports


def sample_report(n=5, seed=0):
    r = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        rows.append((f"img_{i:03d}", {
            "nmse": float(r.uniform(0.001, 0.1)),
            "psnr": float(r.uniform(20, 40)),
            "ssim": float(r.uniform(0.5, 1.0)),
            "hfen": float(r.uniform(0.1, 0.9)),
        }))
    return MetricReport(rows=rows)


def test_report_round_trip(tmp_path):
    rep = sample_report()
    extra = sample_report(seed=1).aggregate()
    path = tmp_path / "report.csv"
    write_report_csv(path, rep, extra_aggregates=[("zero_filled", extra)])
    rows, aggregates = read_report_csv(path)
    assert [r[0] for r in rows] == [r[0] for r in rep.rows]
    agg = rep.aggregate()
    for m in METRIC_NAMES:
        assert aggregates["mean"][m] == pytest.approx(agg[m][0], abs=1e-8)
        assert aggregates["std"][m] == pytest.approx(agg[m][1], abs=1e-8)
        assert aggregates["zero_filled_mean"][m] == pytest.approx(extra[m][0], abs=1e-8)
    # aggregates recomputed from the parsed rows match the stored rows
    reparsed = MetricReport(rows=rows).aggregate()
    for m in METRIC_NAMES:
        assert reparsed[m][0] == pytest.approx(aggregates["mean"][m], abs=1e-6)


def test_report_aggregate_order_independent():
    rep = sample_report(n=8)
    rev = MetricReport(rows=list(reversed(rep.rows)))
    a, b = rep.aggregate(), rev.aggregate()
    for m in METRIC_NAMES:
        assert a[m][0] == pytest.approx(b[m][0], rel=1e-12)
        assert a[m][1] == pytest.approx(b[m][1], rel=1e-12)


def test_report_bad_header_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,a,b\nx,1,2\n")
    with pytest.raises(ValueError):
        read_report_csv(p)
