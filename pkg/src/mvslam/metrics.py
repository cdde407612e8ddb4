"""Trajectory and depth error metrics, and their text/CSV reports.

Trajectory errors follow the usual ATE/RPE conventions: ATE compares each
aligned estimated pose with its ground-truth partner, RPE compares relative
motions over a fixed frame gap. Depth errors are the seven standard
monocular-depth scores computed over the joint validity mask.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .camera import DepthMap
from .errors import AlignmentFailed, DataError, InsufficientData, InvalidArgument, ParseError
from .geometry import Pose, rotation_angle
from .trajectory import Trajectory, associate

ALIGN_MODES = ("none", "se3", "sim3")
DEPTH_KEYS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Summary statistics of one metric, always recomputable from ``samples``."""

    name: str
    samples: np.ndarray
    unit: str = ""

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64).reshape(-1)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return len(self.samples)

    def _stat(self, fn) -> float:
        return float(fn(self.samples)) if self.count else math.nan

    @property
    def mean(self) -> float:
        return self._stat(np.mean)

    @property
    def median(self) -> float:
        return self._stat(np.median)

    @property
    def q1(self) -> float:
        return self._stat(lambda s: np.percentile(s, 25))

    @property
    def q3(self) -> float:
        return self._stat(lambda s: np.percentile(s, 75))

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def rmse(self) -> float:
        return self._stat(lambda s: np.sqrt(np.mean(s * s)))

    @property
    def std(self) -> float:
        return self._stat(np.std)

    @property
    def min(self) -> float:
        return self._stat(np.min)

    @property
    def max(self) -> float:
        return self._stat(np.max)

    def summary(self) -> dict[str, float]:
        return {
            "count": self.count,
            "mean": self.mean,
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "iqr": self.iqr,
            "rmse": self.rmse,
            "std": self.std,
            "min": self.min,
            "max": self.max,
        }


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Similarity:
    """``x -> s R x + t``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply_points(self, p: np.ndarray) -> np.ndarray:
        return self.scale * (p @ self.rotation.T) + self.translation

    def apply_pose(self, p: Pose) -> Pose:
        return Pose(self.rotation @ p.rotation, self.apply_points(p.translation), p.scaled)


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> Similarity:
    """Least-squares similarity with ``dst ~ s R src + t``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 3 or src.shape != dst.shape:
        raise AlignmentFailed(f"need at least 3 paired points, got {n}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.mean(np.sum(xs * xs, axis=1))
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    sv = np.linalg.svd(xs, compute_uv=False)
    if var_s <= 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise AlignmentFailed("positions are degenerate (coincident or collinear)")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    return Similarity(s, R, mu_d - s * R @ mu_s)


def align_umeyama(est: Trajectory, gt: Trajectory, with_scale: bool = True) -> Similarity:
    """Similarity that maps estimated positions onto ground truth (matched by frame id)."""
    e, g, _ = associate(est, gt)
    return umeyama(np.array([p.translation for p in e]), np.array([p.translation for p in g]), with_scale)


def _aligned(est: Trajectory, gt: Trajectory, align: str):
    if align not in ALIGN_MODES:
        raise InvalidArgument(f"unknown alignment {align!r}; expected one of {ALIGN_MODES}")
    e, g, ids = associate(est, gt)
    if len(e) < 2:
        raise InsufficientData(f"need at least 2 associated poses, got {len(e)}")
    sim = Similarity(1.0, np.eye(3), np.zeros(3))
    if align != "none":
        pe = np.array([p.translation for p in e])
        pg = np.array([p.translation for p in g])
        sim = umeyama(pe, pg, with_scale=(align == "sim3"))
    return [sim.apply_pose(p) for p in e], g, ids, sim


# ---------------------------------------------------------------------------
# trajectory metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrajectoryErrors:
    ate: MetricReport
    rte: MetricReport
    rre: MetricReport
    frame_ids: tuple[int, ...]
    alignment: Similarity
    align_mode: str
    delta: int


def ate(est: Trajectory, gt: Trajectory, align: str = "sim3") -> MetricReport:
    """Per-frame ``||trans(gt_i^-1 S est_i)||`` after the requested alignment ``S``."""
    e, g, _, _ = _aligned(est, gt, align)
    err = [np.linalg.norm((gi.inverse() @ ei).translation) for ei, gi in zip(e, g)]
    return MetricReport("ate", np.array(err), "m")


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1, scale: float = 1.0) -> tuple[MetricReport, MetricReport]:
    """Relative translation (m) and rotation (deg) errors over ``delta``-frame gaps.

    ``scale`` multiplies estimated translations first, for monocular
    estimates whose scale was recovered by a ``sim3`` fit.
    """
    if delta < 1:
        raise InvalidArgument("delta must be >= 1")
    e, g, _ = associate(est, gt)
    if len(e) <= delta:
        raise InsufficientData(f"need more than {delta} associated poses, got {len(e)}")
    if scale != 1.0:
        e = [p.with_translation(scale * p.translation) for p in e]
    rte, rre = [], []
    for i in range(len(e) - delta):
        j = i + delta
        E = (g[i].inverse() @ g[j]).inverse() @ (e[i].inverse() @ e[j])
        rte.append(np.linalg.norm(E.translation))
        rre.append(np.degrees(rotation_angle(E.rotation)))
    return MetricReport("rte", np.array(rte), "m"), MetricReport("rre", np.array(rre), "deg")


def evaluate_trajectory(est: Trajectory, gt: Trajectory, align: str = "sim3", delta: int = 1) -> TrajectoryErrors:
    e, g, ids, sim = _aligned(est, gt, align)
    err = [np.linalg.norm((gi.inverse() @ ei).translation) for ei, gi in zip(e, g)]
    rte, rre = rpe(est, gt, delta, scale=sim.scale)
    return TrajectoryErrors(MetricReport("ate", np.array(err), "m"), rte, rre, tuple(ids), sim, align, delta)


# ---------------------------------------------------------------------------
# depth metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DepthErrors:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float
    scale: float = 1.0
    count: int = 0

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in DEPTH_KEYS}


def depth_metrics(pred: DepthMap, gt: DepthMap, scaling: str = "none") -> DepthErrors:
    """Seven depth scores over pixels valid in both maps.

    ``scaling="median"`` first multiplies the prediction by
    ``median(gt) / median(pred)`` over the joint mask.
    """
    if pred.shape != gt.shape:
        raise InvalidArgument(f"depth maps differ in size: {pred.shape} vs {gt.shape}")
    if scaling not in ("none", "median"):
        raise InvalidArgument(f"unknown scaling {scaling!r}")
    mask = pred.valid & gt.valid
    if not mask.any():
        raise InsufficientData("no pixel is valid in both depth maps")
    dp = pred.values[mask].astype(np.float64)
    dt = gt.values[mask].astype(np.float64)
    s = 1.0
    if scaling == "median":
        s = float(np.median(dt) / np.median(dp))
        dp = dp * s
    diff = dp - dt
    ratio = np.maximum(dp / dt, dt / dp)
    log_diff = np.log(dp) - np.log(dt)
    return DepthErrors(
        abs_rel=float(np.mean(np.abs(diff) / dt)),
        sq_rel=float(np.mean((diff / dt) ** 2)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean(log_diff**2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
        scale=s,
        count=int(mask.sum()),
    )


def depth_reports(per_frame: list[DepthErrors]) -> dict[str, MetricReport]:
    """One report per score, with one sample per frame."""
    return {k: MetricReport(k, np.array([getattr(d, k) for d in per_frame])) for k in DEPTH_KEYS}


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


def format_report(header: Mapping[str, object], reports: Mapping[str, MetricReport] = ()) -> str:
    """``key=value`` lines: header entries first, then ``<metric>.<stat>`` lines."""
    lines = [f"{k}={_fmt(v)}" for k, v in header.items()]
    for name, rep in dict(reports).items():
        for stat, v in rep.summary().items():
            lines.append(f"{name}.{stat}={_fmt(v)}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidArgument(f"report line without '=': {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_samples_csv(path, ids, columns: Mapping[str, np.ndarray], id_name: str = "frame_id") -> None:
    """CSV with a header row ``<id_name>,<col>,...`` and one row per sample."""
    names = list(columns)
    n = len(ids)
    for k in names:
        if len(columns[k]) != n:
            raise InvalidArgument(f"column {k!r} has {len(columns[k])} rows, expected {n}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_name, *names])
        for r in range(n):
            w.writerow([ids[r], *(repr(float(columns[k][r])) for k in names)])


def read_samples_csv(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Inverse of :func:`write_samples_csv`; empty cells read as NaN."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty CSV")
    header = rows[0]
    ids, data = [], []
    for no, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", no, path)
        try:
            data.append([float(v) if v.strip() else math.nan for v in r[1:]])
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", no, path) from None
        ids.append(r[0])
    arr = np.array(data, dtype=np.float64).reshape(len(data), len(header) - 1)
    return ids, {name: arr[:, c] for c, name in enumerate(header[1:])}


@dataclass
class Report:
    """Convenience bundle for CLI output."""

    header: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    def text(self) -> str:
        return format_report(self.header, self.reports)

    def write(self, path) -> None:
        Path(path).write_text(self.text())
