import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mvslam.camera import DepthMap
from mvslam.errors import AlignmentFailed, InsufficientData, InvalidArgument
from mvslam.geometry import Pose, se3_exp
from mvslam.metrics import (
    MetricReport,
    Similarity,
    align_umeyama,
    ate,
    depth_metrics,
    evaluate_trajectory,
    format_report,
    parse_report,
    read_samples_csv,
    rpe,
    write_samples_csv,
)
from mvslam.stats import jarque_bera, two_sample_ttest, variance_equality_test
from mvslam.trajectory import Trajectory

from .conftest import random_pose, random_rotation


def random_trajectory(rng, n=30):
    poses = [random_pose(rng)]
    for _ in range(n - 1):
        poses.append(poses[-1] @ se3_exp(rng.normal(0, 0.1, 6)))
    return Trajectory.from_poses(poses)


def transformed(traj, sim: Similarity):
    return Trajectory(traj.frame_ids, traj.timestamps, [sim.apply_pose(p) for p in traj.poses])


def random_similarity(rng):
    return Similarity(float(rng.uniform(0.2, 5.0)), random_rotation(rng), rng.normal(size=3))


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


def test_umeyama_identity(rng):
    gt = random_trajectory(rng)
    s = align_umeyama(gt, gt)
    assert s.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(s.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(s.translation, 0.0, atol=1e-12)


def test_umeyama_doubled_positions(rng):
    gt = random_trajectory(rng)
    est = Trajectory(gt.frame_ids, gt.timestamps, [p.with_translation(2 * p.translation) for p in gt.poses])
    # est -> gt halves; gt -> est doubles
    assert align_umeyama(est, gt).scale == pytest.approx(0.5, abs=1e-12)
    assert align_umeyama(gt, est).scale == pytest.approx(2.0, abs=1e-12)


def test_umeyama_recovers_similarity(rng):
    for _ in range(20):
        gt = random_trajectory(rng)
        S = random_similarity(rng)
        s = align_umeyama(gt, transformed(gt, S))
        assert s.scale == pytest.approx(S.scale, rel=1e-9)
        np.testing.assert_allclose(s.rotation, S.rotation, atol=1e-9)
        np.testing.assert_allclose(s.translation, S.translation, atol=1e-9)


def test_umeyama_rejects_collinear():
    poses = [Pose(np.eye(3), [k, 2 * k, 0.0]) for k in range(5)]
    t = Trajectory.from_poses(poses)
    with pytest.raises(AlignmentFailed):
        align_umeyama(t, t)


# ---------------------------------------------------------------------------
# ATE / RPE
# ---------------------------------------------------------------------------


def test_ate_of_identical_is_zero(rng):
    gt = random_trajectory(rng)
    for mode in ("none", "se3", "sim3"):
        assert ate(gt, gt, mode).max == pytest.approx(0.0, abs=1e-9)


def test_ate_constant_offset(rng):
    gt = random_trajectory(rng)
    est = Trajectory(gt.frame_ids, gt.timestamps, [p.with_translation(p.translation + [1, 0, 0]) for p in gt.poses])
    np.testing.assert_allclose(ate(est, gt, "none").samples, 1.0, atol=1e-12)
    assert ate(est, gt, "se3").max <= 1e-9


def test_ate_sim3_invariance(rng):
    gt = random_trajectory(rng)
    est = Trajectory(gt.frame_ids, gt.timestamps, [p @ se3_exp(rng.normal(0, 0.01, 6)) for p in gt.poses])
    base = ate(est, gt, "sim3").samples
    for _ in range(5):
        moved = ate(transformed(est, random_similarity(rng)), gt, "sim3").samples
        np.testing.assert_allclose(moved, base, atol=1e-9)


def test_ate_needs_two_pairs(rng):
    one = Trajectory.from_poses([Pose()])
    with pytest.raises(InsufficientData):
        ate(one, one, "none")
    with pytest.raises(InvalidArgument):
        ate(random_trajectory(rng), random_trajectory(rng), "affine")


def test_rpe_zero_and_left_invariant(rng):
    gt = random_trajectory(rng)
    rte, rre = rpe(gt, gt)
    assert rte.max < 1e-12 and rre.max < 1e-6
    T = random_pose(rng, 3.0)
    for a, b in [(gt.transformed(T), gt), (gt, gt.transformed(T))]:
        rte, rre = rpe(a, b, delta=3)
        assert rte.max < 1e-9 and rre.max < 1e-6


def test_rpe_single_corrupted_step(rng):
    gt = random_trajectory(rng, 20)
    rel = gt.relative_motions()
    xi = np.array([0.01, -0.02, 0.015, 0.003, 0.001, -0.002])
    poses = [gt.poses[0]]
    for k, m in enumerate(rel):
        poses.append(poses[-1] @ (m @ se3_exp(xi) if k == 7 else m))
    est = Trajectory(gt.frame_ids, gt.timestamps, poses)
    rte, rre = rpe(est, gt)
    bad = np.flatnonzero(rte.samples > 1e-9)
    np.testing.assert_array_equal(bad, [7])
    assert rte.samples[7] == pytest.approx(np.linalg.norm(se3_exp(xi).translation), rel=1e-9)
    assert rre.samples[7] == pytest.approx(np.degrees(np.linalg.norm(xi[:3])), rel=1e-9)
    assert np.flatnonzero(rre.samples > 1e-6).tolist() == [7]


def test_rpe_delta_validation(rng):
    gt = random_trajectory(rng, 5)
    with pytest.raises(InvalidArgument):
        rpe(gt, gt, delta=0)
    with pytest.raises(InsufficientData):
        rpe(gt, gt, delta=5)


def test_evaluate_trajectory_rescales_rpe(rng):
    gt = random_trajectory(rng)
    est = transformed(gt, Similarity(0.25, random_rotation(rng), rng.normal(size=3)))
    res = evaluate_trajectory(est, gt, "sim3")
    assert res.ate.max < 1e-9 and res.rte.max < 1e-9
    assert res.alignment.scale == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# report statistics
# ---------------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=60))
def test_report_statistics_match_sort_oracle(xs):
    rep = MetricReport("x", np.array(xs))
    s = sorted(xs)
    n = len(s)

    def pct(q):
        pos = q * (n - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, n - 1)
        return s[lo] + (pos - lo) * (s[hi] - s[lo])

    assert rep.count == n
    assert rep.median == pytest.approx(pct(0.5), abs=1e-9)
    assert rep.iqr == pytest.approx(pct(0.75) - pct(0.25), abs=1e-6)
    assert rep.min == s[0] and rep.max == s[-1]


def test_report_text_roundtrip(tmp_path):
    rep = MetricReport("ate", np.array([0.1, 0.2, 0.4]), "m")
    text = format_report({"align": "sim3", "frames": 3}, {"ate": rep})
    kv = parse_report(text)
    assert kv["align"] == "sim3" and kv["frames"] == "3"
    assert float(kv["ate.rmse"]) == rep.rmse
    assert float(kv["ate.median"]) == 0.2
    write_samples_csv(tmp_path / "s.csv", [4, 5, 6], {"ate": rep.samples})
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "frame_id,ate"
    ids, cols = read_samples_csv(tmp_path / "s.csv")
    assert ids == ["4", "5", "6"]
    np.testing.assert_array_equal(cols["ate"], rep.samples)


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------


def depth_oracle(pred, gt, pmask, gmask):
    """Pixel-by-pixel loops with compensated sums."""
    terms = {k: [] for k in ("abs", "sq", "se", "log", "a1", "a2", "a3")}
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if not (pmask[y, x] and gmask[y, x]):
                continue
            p, t = float(pred[y, x]), float(gt[y, x])
            terms["abs"].append(abs(p - t) / t)
            terms["sq"].append(((p - t) / t) ** 2)
            terms["se"].append((p - t) ** 2)
            terms["log"].append((math.log(p) - math.log(t)) ** 2)
            r = max(p / t, t / p)
            terms["a1"].append(1.0 if r < 1.25 else 0.0)
            terms["a2"].append(1.0 if r < 1.25**2 else 0.0)
            terms["a3"].append(1.0 if r < 1.25**3 else 0.0)
    n = len(terms["abs"])
    m = {k: math.fsum(v) / n for k, v in terms.items()}
    return {
        "abs_rel": m["abs"],
        "sq_rel": m["sq"],
        "rmse": math.sqrt(m["se"]),
        "rmse_log": math.sqrt(m["log"]),
        "a1": m["a1"],
        "a2": m["a2"],
        "a3": m["a3"],
    }


def random_depth_pair(rng, shape=(16, 16)):
    gt = rng.uniform(0.5, 5.0, shape)
    pred = gt * np.exp(rng.normal(0, 0.3, shape))
    pm = rng.uniform(size=shape) > 0.1
    gm = rng.uniform(size=shape) > 0.1
    return pred, gt, pm, gm


def test_depth_matches_pixel_oracle(rng):
    for _ in range(100):
        pred, gt, pm, gm = random_depth_pair(rng)
        got = depth_metrics(DepthMap(pred, pm), DepthMap(gt, gm)).as_dict()
        want = depth_oracle(pred, gt, pm, gm)
        for k in want:
            assert got[k] == pytest.approx(want[k], rel=1e-12, abs=0), k


def test_depth_identical_maps(rng):
    gt = DepthMap(rng.uniform(0.5, 3.0, (16, 16)))
    d = depth_metrics(gt, gt)
    assert d.abs_rel == 0 and d.rmse == 0 and d.sq_rel == 0 and d.rmse_log == 0
    assert d.a1 == d.a2 == d.a3 == 1.0


def test_depth_uniform_ratio(rng):
    gt = rng.uniform(0.5, 3.0, (16, 16))
    d = depth_metrics(DepthMap(1.2 * gt), DepthMap(gt))
    assert d.abs_rel == pytest.approx(0.2, abs=1e-12)
    assert d.rmse_log == pytest.approx(math.log(1.2), abs=1e-12)
    assert d.sq_rel == pytest.approx(0.04, abs=1e-12)
    assert d.a1 == d.a2 == d.a3 == 1.0
    m = depth_metrics(DepthMap(1.2 * gt), DepthMap(gt), scaling="median")
    assert m.abs_rel == pytest.approx(0.0, abs=1e-12)
    assert m.rmse == pytest.approx(0.0, abs=1e-12)
    assert m.rmse_log == pytest.approx(0.0, abs=1e-12)
    assert m.a1 == m.a2 == m.a3 == 1.0
    assert m.scale == pytest.approx(1 / 1.2)


def test_depth_accuracy_symmetric(rng):
    for _ in range(20):
        pred, gt, pm, gm = random_depth_pair(rng)
        a = depth_metrics(DepthMap(pred, pm), DepthMap(gt, gm))
        b = depth_metrics(DepthMap(gt, gm), DepthMap(pred, pm))
        assert (a.a1, a.a2, a.a3) == (b.a1, b.a2, b.a3)


def test_depth_errors():
    z = np.ones((4, 4))
    with pytest.raises(InsufficientData):
        depth_metrics(DepthMap(z), DepthMap(np.zeros((4, 4))))
    with pytest.raises(InvalidArgument):
        depth_metrics(DepthMap(z), DepthMap(np.ones((4, 5))))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def t_pdf(x, df):
    c = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(c - (df + 1) / 2 * math.log1p(x * x / df))


def f_pdf(x, d1, d2):
    if x <= 0:
        return 0.0
    c = math.lgamma((d1 + d2) / 2) - math.lgamma(d1 / 2) - math.lgamma(d2 / 2)
    return math.exp(c + d1 / 2 * math.log(d1 / d2) + (d1 / 2 - 1) * math.log(x) - (d1 + d2) / 2 * math.log1p(d1 * x / d2))


def t_two_sided_quad(t, df):
    # integrate the bulk, which is better conditioned than the tail
    inner, _ = integrate.quad(t_pdf, -abs(t), abs(t), args=(df,), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - inner


def test_ttest_closed_form():
    r = two_sample_ttest([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert r.t == pytest.approx(-1.0, abs=1e-12)
    assert r.df == 8
    assert r.p == pytest.approx(t_two_sided_quad(1.0, 8), abs=1e-10)


def test_ttest_identical_samples():
    r = two_sample_ttest([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert r.t == 0.0 and r.p == 1.0
    d = two_sample_ttest([3.0, 3.0], [3.0, 3.0])
    assert d.t == 0.0 and d.p == 1.0 and d.degenerate
    e = two_sample_ttest([3.0, 3.0], [4.0, 4.0])
    assert e.p == 0.0 and e.degenerate and e.t < 0


@pytest.mark.parametrize("df", [1, 2, 3, 5, 8, 13, 30, 100])
def test_ttest_pvalues_match_quadrature(df):
    from mvslam.stats import t_sf_two_sided

    for t in (0.0, 0.1, 0.5, 1.0, 1.7, 2.5, 4.0, 7.5):
        assert t_sf_two_sided(t, df) == pytest.approx(t_two_sided_quad(t, df), abs=1e-8)


def test_ttest_antisymmetric(rng):
    for _ in range(50):
        a, b = rng.normal(0, 1, rng.integers(2, 30)), rng.normal(0.3, 1.5, rng.integers(2, 30))
        x, y = two_sample_ttest(a, b), two_sample_ttest(b, a)
        assert x.t == pytest.approx(-y.t, rel=1e-12)
        assert x.p == pytest.approx(y.p, rel=1e-12)


def test_ttest_needs_two_samples():
    with pytest.raises(InsufficientData):
        two_sample_ttest([1.0], [1.0, 2.0])


def test_variance_test(rng):
    a = rng.normal(size=12)
    assert variance_equality_test(a, a).f == 1.0
    assert variance_equality_test(a, a).p == 1.0
    c = a - a.mean()
    assert variance_equality_test(c, 2 * c).f == pytest.approx(4.0, abs=1e-12)
    assert variance_equality_test([1.0, 1.0], [2.0, 2.0]).degenerate


@pytest.mark.parametrize("d1, d2", [(1, 1), (3, 7), (10, 4), (20, 30)])
def test_variance_pvalues_match_quadrature(d1, d2):
    from mvslam.stats import f_sf

    for f in (1.0, 1.5, 3.0, 8.0):
        upper = 1.0 - integrate.quad(f_pdf, 0, f, args=(d1, d2), epsabs=1e-13, limit=200)[0]
        assert f_sf(f, d1, d2) == pytest.approx(upper, abs=1e-8)


def test_jarque_bera(rng):
    g = jarque_bera(rng.normal(size=20000))
    assert abs(g.skewness) < 0.05 and abs(g.excess_kurtosis) < 0.1 and g.p > 0.01
    e = jarque_bera(rng.exponential(size=20000))
    # exponential: skewness 2, excess kurtosis 6
    assert e.skewness == pytest.approx(2.0, abs=0.2)
    assert e.excess_kurtosis == pytest.approx(6.0, abs=1.5)
    assert e.p < 1e-10
