"""Classical metric translation from pseudo-RGBD frames.

Sparse corners with steered 256-bit binary descriptors are matched between two
frames, lifted to 3-D with the (estimated) depth maps, and a rigid transform is
fitted with RANSAC over 3-point Kabsch solutions. The translation of that
transform carries metric scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, DepthMap, back_project
from .errors import EstimationFailed, InvalidArgument
from .geometry import Pose
from .kernels import features as K

BORDER = K.PATCH_RADIUS + 1
DESCRIPTOR_BYTES = K.N_BITS // 8


@dataclass(frozen=True, eq=False)
class Keypoint:
    u: float
    v: float
    response: float
    angle: float
    descriptor: np.ndarray  # (32,) uint8


class Correspondence3D(NamedTuple):
    p_a: np.ndarray
    p_b: np.ndarray


@dataclass(frozen=True)
class RansacParams:
    threshold: float = 5e-3
    max_iters: int = 1000
    confidence: float = 0.99
    seed: int = 0
    min_inliers: int = 3


@dataclass(frozen=True, eq=False)
class RigidEstimate:
    pose: Pose
    inliers: np.ndarray
    iterations: int
    #: first-order covariance of the translation, from the inlier residuals
    translation_cov: np.ndarray = field(default_factory=lambda: np.full((3, 3), np.nan))

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def to_gray(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    return np.ascontiguousarray(img, dtype=np.float64)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------


def _subpixel(resp: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = resp[ys, xs]

    def offset(lo, hi):
        den = lo - 2.0 * c + hi
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(den < 0.0, 0.5 * (lo - hi) / den, 0.0)
        return np.clip(d, -0.5, 0.5)

    du = offset(resp[ys, xs - 1], resp[ys, xs + 1])
    dv = offset(resp[ys - 1, xs], resp[ys + 1, xs])
    return xs + du, ys + dv


def _bucket(xs, ys, scores, shape, max_n: int, grid: int) -> np.ndarray:
    """Indices of at most ``max_n`` candidates, spread over a ``grid x grid`` layout."""
    h, w = shape
    # strongest first; raster position breaks ties so the result is deterministic
    order = np.lexsort((xs, ys, -scores))
    cell = (ys[order] * grid // h) * grid + (xs[order] * grid // w)
    per_cell = max(1, math.ceil(max_n / (grid * grid)))
    rank = np.zeros(grid * grid, dtype=np.int64)
    first, rest = [], []
    for idx, c in zip(order, cell):
        if rank[c] < per_cell:
            first.append(idx)
            rank[c] += 1
        else:
            rest.append(idx)
    chosen = np.array((first + rest)[:max_n], dtype=np.int64)
    return chosen


def detect_features(
    image,
    max_n: int = 500,
    method: str = "harris",
    fast_threshold: float = 20.0,
    harris_k: float = 0.04,
    rel_threshold: float = 0.01,
    grid: int = 8,
) -> list[Keypoint]:
    """Corners with steered BRIEF descriptors, strongest first.

    ``method="harris"`` scores pixels with the structure-tensor response;
    ``method="fast"`` uses the 9-of-16 segment test. Either way candidates are
    non-max suppressed, refined to sub-pixel by a quadratic fit, bucketed on a
    ``grid x grid`` layout and truncated to ``max_n``.
    """
    img = to_gray(image)
    if img.size == 0:
        raise InvalidArgument("empty image")
    h, w = img.shape
    if h <= 2 * BORDER or w <= 2 * BORDER or max_n <= 0:
        return []

    if method == "harris":
        resp = K.harris_response(img, K.gaussian_taps(1.5), harris_k)
    elif method == "fast":
        resp = K.fast_score(img, float(fast_threshold))
    else:
        raise InvalidArgument(f"unknown detector {method!r}")

    peak = float(resp.max())
    if not peak > 0.0:
        return []
    keep = K.nms(resp, max(rel_threshold * peak, 1e-12), BORDER)
    ys, xs = np.nonzero(keep)
    if len(xs) == 0:
        return []
    scores = resp[ys, xs]
    sel = _bucket(xs, ys, scores, (h, w), max_n, grid)
    xs, ys, scores = xs[sel], ys[sel], scores[sel]
    order = np.lexsort((xs, ys, -scores))
    xs, ys, scores = xs[order], ys[order], scores[order]

    us, vs = _subpixel(resp, ys, xs)
    smooth = ndimage.gaussian_filter(img, 2.0, mode="nearest")
    xi = np.ascontiguousarray(xs, dtype=np.int64)
    yi = np.ascontiguousarray(ys, dtype=np.int64)
    angles = K.orientation(smooth, xi, yi)
    desc = K.brief(smooth, xi, yi, angles)
    return [
        Keypoint(float(us[i]), float(vs[i]), float(scores[i]), float(angles[i]), desc[i])
        for i in range(len(xs))
    ]


def descriptors(kps: Sequence[Keypoint]) -> np.ndarray:
    if not kps:
        return np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    return np.ascontiguousarray(np.stack([k.descriptor for k in kps]), dtype=np.uint8)


def coordinates(kps: Sequence[Keypoint]) -> np.ndarray:
    return np.array([(k.u, k.v) for k in kps], dtype=np.float64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


def match_features(a: Sequence[Keypoint], b: Sequence[Keypoint], ratio: float = 0.8) -> list[tuple[int, int]]:
    """Mutual nearest neighbours under Hamming distance that pass the ratio test."""
    da, db = descriptors(a), descriptors(b)
    if len(da) == 0 or len(db) == 0:
        return []
    if da.shape[1] != db.shape[1]:
        raise InvalidArgument("descriptor lengths differ")
    D = K.hamming(da, db)
    best = np.argmin(D, axis=1)
    back = np.argmin(D, axis=0)
    d1 = D[np.arange(len(da)), best]
    if D.shape[1] > 1:
        d2 = np.partition(D, 1, axis=1)[:, 1]
    else:
        d2 = np.full(len(da), np.iinfo(np.int64).max)
    out = []
    for i in range(len(da)):
        j = int(best[i])
        if back[j] == i and d1[i] < ratio * d2[i]:
            out.append((i, j))
    return out


# ---------------------------------------------------------------------------
# rigid transform
# ---------------------------------------------------------------------------


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``R, t`` with ``dst ~ R @ src + t``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0.0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def _degenerate(pts: np.ndarray, tol: float = 1e-6) -> bool:
    if len(pts) < 3:
        return True
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return s[0] < 1e-12 or s[1] < tol * s[0]


def _as_arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(corrs, np.ndarray):
        arr = np.asarray(corrs, dtype=np.float64).reshape(-1, 2, 3)
        return arr[:, 0], arr[:, 1]
    if len(corrs) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    pa = np.array([c.p_a for c in corrs], dtype=np.float64).reshape(-1, 3)
    pb = np.array([c.p_b for c in corrs], dtype=np.float64).reshape(-1, 3)
    return pa, pb


def estimate_rigid_transform(corrs, ransac: RansacParams | None = None) -> RigidEstimate:
    """Robust rigid transform mapping frame-b points onto frame-a points.

    ``corrs`` is a sequence of :class:`Correspondence3D` or an ``(N, 2, 3)``
    array of ``(p_a, p_b)`` pairs. The returned pose satisfies
    ``p_a ~ R @ p_b + t``, i.e. it is the motion of camera b expressed in
    camera a. Raises :class:`EstimationFailed` on fewer than 3 correspondences,
    no consensus, or collinear inliers.
    """
    ransac = RansacParams() if ransac is None else ransac
    pa, pb = _as_arrays(corrs)
    n = len(pa)
    if n < 3:
        raise EstimationFailed(f"need at least 3 correspondences, got {n}")
    if not (np.all(np.isfinite(pa)) and np.all(np.isfinite(pb))):
        raise InvalidArgument("correspondences must be finite")

    rng = np.random.default_rng(ransac.seed)
    best = np.zeros(n, dtype=bool)
    best_count = 0
    needed = ransac.max_iters
    it = 0
    while it < needed:
        it += 1
        idx = rng.choice(n, 3, replace=False)
        if _degenerate(pb[idx]) or _degenerate(pa[idx]):
            continue
        R, t = kabsch(pb[idx], pa[idx])
        inl = np.linalg.norm(pa - (pb @ R.T + t), axis=1) < ransac.threshold
        c = int(inl.sum())
        if c > best_count:
            best, best_count = inl, c
            frac = c / n
            if frac >= 1.0:
                needed = it
            else:
                k = math.log(1.0 - ransac.confidence) / math.log(1.0 - frac**3)
                needed = min(ransac.max_iters, max(it, int(math.ceil(k))))

    if best_count < max(3, ransac.min_inliers):
        raise EstimationFailed(f"RANSAC found only {best_count} inliers")

    inl = best
    for _ in range(5):
        if _degenerate(pb[inl]):
            raise EstimationFailed("inlier set is degenerate (collinear)")
        R, t = kabsch(pb[inl], pa[inl])
        new = np.linalg.norm(pa - (pb @ R.T + t), axis=1) < ransac.threshold
        if np.array_equal(new, inl) or new.sum() < 3:
            break
        inl = new
    cov = _translation_cov(R, t, pa[inl], pb[inl])
    return RigidEstimate(Pose(R, t, scaled=True), inl, it, cov)


def _translation_cov(R, t, pa, pb, floor: float = 1e-18) -> np.ndarray:
    """Translation block of ``sigma^2 (J^T J)^-1`` for the rotation-plus-translation fit."""
    n = len(pa)
    q = pb @ R.T
    r = pa - (q + t)
    dof = max(1, 3 * n - 6)
    s2 = max(float(np.sum(r * r)) / dof, floor)
    J = np.zeros((3 * n, 6))
    # d/d(theta) of -(exp(theta) R p) is [R p]_x
    J[0::3, 1], J[0::3, 2] = -q[:, 2], q[:, 1]
    J[1::3, 0], J[1::3, 2] = q[:, 2], -q[:, 0]
    J[2::3, 0], J[2::3, 1] = -q[:, 1], q[:, 0]
    J[0::3, 3] = J[1::3, 4] = J[2::3, 5] = -1.0
    try:
        C = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        return np.full((3, 3), np.inf)
    return 0.5 * (C[3:, 3:] + C[3:, 3:].T)


# ---------------------------------------------------------------------------
# frame-pair convenience used by the pipeline
# ---------------------------------------------------------------------------


def lift_matches(
    kps_a: Sequence[Keypoint],
    kps_b: Sequence[Keypoint],
    matches: Sequence[tuple[int, int]],
    depth_a: DepthMap,
    depth_b: DepthMap,
    k: CameraIntrinsics,
) -> np.ndarray:
    """``(M, 2, 3)`` array of 3-D correspondences for matches with valid depth at both ends."""
    if not matches:
        return np.zeros((0, 2, 3))
    m = np.asarray(matches, dtype=np.int64)
    ca, cb = coordinates(kps_a)[m[:, 0]], coordinates(kps_b)[m[:, 1]]
    za, oka = depth_a.sample(ca[:, 0], ca[:, 1])
    zb, okb = depth_b.sample(cb[:, 0], cb[:, 1])
    ok = oka & okb
    if not ok.any():
        return np.zeros((0, 2, 3))
    pa = back_project(ca[ok, 0], ca[ok, 1], za[ok], k)
    pb = back_project(cb[ok, 0], cb[ok, 1], zb[ok], k)
    return np.stack([pa, pb], axis=1)


def estimate_frame_motion(
    kps_a: Sequence[Keypoint],
    kps_b: Sequence[Keypoint],
    depth_a: DepthMap,
    depth_b: DepthMap,
    k: CameraIntrinsics,
    ratio: float = 0.8,
    ransac: RansacParams | None = None,
) -> RigidEstimate:
    """Metric motion of frame b relative to frame a."""
    matches = match_features(kps_a, kps_b, ratio)
    corrs = lift_matches(kps_a, kps_b, matches, depth_a, depth_b, k)
    return estimate_rigid_transform(corrs, ransac)


# ---------------------------------------------------------------------------
# dense scale along a known direction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float
    pixels: int
    #: rms of d(residual)/d(scale); near zero means depth cannot see this motion
    sensitivity: float
    rms: float
    iterations: int


def _target_sampler(depth: DepthMap):
    vals = depth.values
    valid = depth.valid
    if not valid.all():
        # fill holes with the nearest valid depth so the spline stays finite,
        # then only trust samples whose whole support is valid
        idx = ndimage.distance_transform_edt(~valid, return_distances=False, return_indices=True)
        vals = vals[tuple(idx)]
    coef = ndimage.spline_filter(vals, order=3)
    trusted = ndimage.binary_erosion(valid, np.ones((5, 5), dtype=bool), border_value=0)
    return coef, trusted


def depth_consistent_scale(
    depth_a: DepthMap,
    depth_b: DepthMap,
    rotation,
    direction,
    k: CameraIntrinsics,
    s0: float,
    stride: int = 2,
    max_iters: int = 10,
    min_pixels: int = 200,
) -> ScaleEstimate:
    """Scale ``s`` that makes depth b, moved by ``(rotation, s * direction)``, agree with depth a.

    Pixels of frame b are lifted with their depth, mapped into frame a and
    compared against the bicubic-interpolated depth of frame a. The 1-D
    problem is solved by Gauss-Newton with Huber weights. Raises
    :class:`EstimationFailed` when too few pixels overlap or the depth
    residual does not respond to the scale.
    """
    R = np.asarray(rotation, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    nd = np.linalg.norm(d)
    if not nd > 0:
        raise EstimationFailed("zero direction carries no scale")
    d = d / nd
    v, u = np.mgrid[0 : depth_b.height : stride, 0 : depth_b.width : stride]
    ok = depth_b.valid[v, u]
    if ok.sum() < min_pixels:
        raise EstimationFailed("too few valid source pixels")
    q = back_project(u[ok], v[ok], depth_b.values[v, u][ok], k) @ R.T
    coef, trusted = _target_sampler(depth_a)
    h, w = depth_a.shape

    def residual(s):
        y = q + s * d
        z = y[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uu = k.fx * y[:, 0] / z + k.cx
            vv = k.fy * y[:, 1] / z + k.cy
        inside = (z > 0) & (uu >= 1) & (vv >= 1) & (uu <= w - 3) & (vv <= h - 3)
        uu, vv = np.where(inside, uu, 0.0), np.where(inside, vv, 0.0)
        inside &= trusted[np.rint(vv).astype(np.int64), np.rint(uu).astype(np.int64)]
        za = ndimage.map_coordinates(coef, [vv, uu], order=3, prefilter=False, mode="nearest")
        return np.where(inside, za - z, np.nan)

    s = float(s0)
    step = 1e-3 * max(abs(s), 1e-9)
    it = 0
    for it in range(1, max_iters + 1):
        r = residual(s)
        J = (residual(s + step) - residual(s - step)) / (2.0 * step)
        m = np.isfinite(r) & np.isfinite(J)
        if m.sum() < min_pixels:
            raise EstimationFailed("too few overlapping pixels")
        r, J = r[m], J[m]
        mad = float(np.median(np.abs(r - np.median(r))))
        kh = max(1.345 * 1.4826 * mad, 1e-12)
        wgt = np.minimum(1.0, kh / np.maximum(np.abs(r), 1e-300))
        den = float(np.sum(wgt * J * J))
        if not den > 0:
            raise EstimationFailed("depth residual does not respond to scale")
        ds = -float(np.sum(wgt * J * r)) / den
        s += ds
        if abs(ds) <= 1e-10 * max(abs(s), 1e-12):
            break
    sens = math.sqrt(float(np.mean(J * J)))
    if not (np.isfinite(s) and s > 0):
        raise EstimationFailed(f"dense scale did not converge to a positive value ({s})")
    return ScaleEstimate(s, int(m.sum()), sens, math.sqrt(float(np.mean(r * r))), it)


@dataclass(frozen=True, eq=False)
class MetricTranslation:
    translation: np.ndarray
    source: str  # "dense" or "features"
    features: RigidEstimate
    dense: ScaleEstimate | None
    mahalanobis2: float


#: 99% point of the chi-square distribution with 3 degrees of freedom
GATE_CHI2_3DOF = 11.345


def metric_translation(
    kps_a: Sequence[Keypoint],
    kps_b: Sequence[Keypoint],
    depth_a: DepthMap,
    depth_b: DepthMap,
    k: CameraIntrinsics,
    rel_unscaled: Pose,
    ratio: float = 0.8,
    ransac: RansacParams | None = None,
    refine: bool = True,
    gate: float = GATE_CHI2_3DOF,
) -> MetricTranslation:
    """Metric translation of frame b in frame a.

    The feature estimate is always computed. When ``refine`` is set, the scale
    along the pose estimator's direction is also solved densely from the two
    depth maps; that value replaces the feature translation only if it lies
    within the ``gate`` Mahalanobis bound of the feature fit. The dense value
    is exact for exact inputs, but it trusts the estimator's rotation, which
    the feature fit does not.
    """
    est = estimate_frame_motion(kps_a, kps_b, depth_a, depth_b, k, ratio, ransac)
    t_f = est.pose.translation
    u = rel_unscaled.translation
    if not refine or not np.any(u):
        return MetricTranslation(t_f, "features", est, None, math.nan)
    try:
        sc = depth_consistent_scale(depth_a, depth_b, rel_unscaled.rotation, u, k, float(np.linalg.norm(t_f)))
    except EstimationFailed:
        return MetricTranslation(t_f, "features", est, None, math.nan)
    cand = sc.scale * u / np.linalg.norm(u)
    diff = cand - t_f
    try:
        m2 = float(diff @ np.linalg.solve(est.translation_cov, diff))
    except np.linalg.LinAlgError:
        m2 = math.inf
    if np.isfinite(m2) and m2 <= gate:
        return MetricTranslation(cand, "dense", est, sc, m2)
    return MetricTranslation(t_f, "features", est, sc, m2)
