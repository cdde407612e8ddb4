"""Frame loop: unscaled pose, metric translation, scale filter, pose graph, fusion."""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import DepthMap
from .config import Config
from .dataset import Dataset
from .errors import ConfigError, EstimationFailed, InvalidArgument
from .estimators import DepthEstimator, PoseEstimator, depth_estimator_from_config, pose_estimator_from_config
from .feature_pose import RansacParams, detect_features, metric_translation
from .formats import save_trajectory
from .geometry import Pose
from .metrics import format_report
from .pose_graph import Edge, OptimizeOptions, PoseGraph, odometry_information, optimize
from .scale_fusion import ScaleCorrector, UkfParams
from .trajectory import Trajectory
from .tsdf import TsdfVolume, extract_surface, integrate, save_volume, write_ply

log = logging.getLogger(__name__)

STAGES = ("load", "depth", "pose", "features", "scale", "filter", "graph", "tsdf")


@dataclass
class RunStats:
    frames: int = 0
    frames_predict_only: int = 0
    filter_resets: int = 0
    estimator_failures: int = 0
    scale_dense_frames: int = 0
    scale_feature_frames: int = 0
    graph_optimizations: int = 0
    graph_iterations: int = 0
    graph_final_cost: float = 0.0
    tsdf_frames: int = 0
    tsdf_clipped_points: int = 0
    surface_points: int = 0
    timings: dict = field(default_factory=lambda: defaultdict(float))

    def as_dict(self) -> dict[str, object]:
        out = {k: v for k, v in self.__dict__.items() if k != "timings"}
        for s in STAGES:
            out[f"time_{s}_s"] = round(self.timings.get(s, 0.0), 3)
        return out


@dataclass
class SlamResult:
    trajectory: Trajectory
    volume: TsdfVolume | None
    stats: RunStats
    graph: PoseGraph


class _Clock:
    def __init__(self, stats: RunStats):
        self.t = stats.timings

    def __call__(self, stage):
        return _Tick(self.t, stage)


class _Tick:
    def __init__(self, acc, stage):
        self.acc, self.stage = acc, stage

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.acc[self.stage] += time.perf_counter() - self.t0


def ukf_params(cfg: Config) -> UkfParams:
    return UkfParams.from_diag(
        cfg["ukf.q_diag"],
        cfg["ukf.r_diag"],
        cfg["ukf.p0_diag"],
        alpha=cfg["ukf.alpha"],
        beta=cfg["ukf.beta"],
        kappa=cfg["ukf.kappa"],
        measurement_mode=cfg["ukf.mode"],
    )


def new_volume(cfg: Config, center=(0.0, 0.0, 0.0)) -> TsdfVolume:
    """Empty cube of the configured size; ``run_slam`` centres it on the first camera."""
    return TsdfVolume.around(
        np.asarray(center, dtype=np.float64),
        cfg["tsdf.half_extent_m"],
        cfg["tsdf.voxel_m"],
        trunc=cfg["tsdf.trunc_m"],
        w_max=cfg["tsdf.w_max"],
        with_color=cfg["tsdf.color"],
    )


def _window_optimize(graph: PoseGraph, upto: int, window: int, opts: OptimizeOptions):
    lo = max(0, upto - window + 1)
    keep = set(range(lo, upto + 1))
    sub = PoseGraph()
    for i in sorted(keep):
        sub.add_node(i, graph.nodes[i], fixed=(i == lo))
    sub.edges = [e for e in graph.edges if e.i in keep and e.j in keep]
    return optimize(sub, opts)


def run_slam(
    cfg: Config,
    dataset: Dataset | None = None,
    pose_estimator: PoseEstimator | None = None,
    depth_estimator: DepthEstimator | None = None,
    loop_edges: Sequence[Edge] = (),
) -> SlamResult:
    """Run the full pipeline over a dataset.

    The first camera defines the world frame. Estimators default to the ones
    selected in ``cfg``. ``loop_edges`` are extra pose-graph constraints keyed
    by frame index; they join the graph once both endpoints exist.
    """
    if dataset is None:
        if not cfg["dataset.path"]:
            raise ConfigError("dataset.path is not set")
        dataset = Dataset(cfg["dataset.path"])
    n = len(dataset)
    pose_est = pose_estimator or pose_estimator_from_config(cfg, dataset)
    depth_est = depth_estimator or depth_estimator_from_config(cfg, dataset)
    k = dataset.intrinsics

    stats = RunStats(frames=n)
    clock = _Clock(stats)
    corrector = ScaleCorrector(ukf_params(cfg), cfg["ukf.reset_after"])
    ransac = RansacParams(cfg["ransac.threshold_m"], cfg["ransac.max_iters"], seed=cfg["ransac.seed"])
    info = odometry_information(math.radians(cfg["graph.sigma_rot_deg"]), cfg["graph.sigma_trans_m"])
    opts = OptimizeOptions(max_iters=cfg["graph.max_iters"], huber=cfg["graph.huber"] or None)
    loops = defaultdict(list)
    for e in loop_edges:
        loops[max(e.i, e.j)].append(e)

    def detect(img):
        return detect_features(img, cfg["features.max_n"], cfg["features.detector"], cfg["features.fast_threshold"])

    graph = PoseGraph()
    graph.add_node(0, Pose(), fixed=True)
    volume = new_volume(cfg) if cfg["tsdf.enabled"] else None
    pending: list[tuple[int, DepthMap, np.ndarray]] = []

    def flush():
        with clock("tsdf"):
            for i, d, img in pending:
                integrate(volume, d, graph.nodes[i], k, color=img if volume.has_color else None, inplace=True)
                stats.tsdf_frames += 1
            pending.clear()

    with clock("load"):
        rgb_prev = dataset.rgb(0)
    with clock("depth"):
        depth_prev = depth_est(0, rgb_prev)
    with clock("features"):
        kps_prev = detect(rgb_prev)
    if volume is not None:
        pending.append((0, depth_prev, rgb_prev))

    for i in range(1, n):
        with clock("load"):
            rgb = dataset.rgb(i)
        with clock("depth"):
            depth = depth_est(i, rgb)
        with clock("pose"):
            rel = pose_est(i - 1, rgb_prev, rgb)
        if rel.scaled:
            raise InvalidArgument(f"frame {i}: pose estimators must return unscaled motions")
        with clock("features"):
            kps = detect(rgb)
        t_scaled = None
        with clock("scale"):
            try:
                mt = metric_translation(
                    kps_prev,
                    kps,
                    depth_prev,
                    depth,
                    k,
                    rel,
                    cfg["features.ratio"],
                    ransac,
                    refine=cfg["scale.refine"],
                    gate=cfg["scale.gate_chi2"],
                )
                t_scaled = mt.translation
                if mt.source == "dense":
                    stats.scale_dense_frames += 1
                else:
                    stats.scale_feature_frames += 1
            except EstimationFailed as exc:
                stats.estimator_failures += 1
                log.debug("frame %d: metric translation failed (%s)", i, exc)
        with clock("filter"):
            step = corrector.step(rel, t_scaled)
        graph.add_node(i, graph.nodes[i - 1] @ step)
        graph.add_edge(i - 1, i, step, info)
        for e in loops.pop(i, ()):
            graph.edges.append(e)
        if volume is not None:
            pending.append((i, depth, rgb))

        if cfg["graph.enabled"] and i % cfg["graph.every"] == 0:
            with clock("graph"):
                sub, st = _window_optimize(graph, i, cfg["graph.window"], opts)
                for j, p in sub.nodes.items():
                    graph.nodes[j] = p
            stats.graph_optimizations += 1
            stats.graph_iterations += st.iterations
            stats.graph_final_cost = st.final_cost
            if volume is not None:
                flush()
        rgb_prev, depth_prev, kps_prev = rgb, depth, kps

    if volume is not None:
        flush()
    stats.frames_predict_only = corrector.frames_predict_only
    stats.filter_resets = corrector.filter_resets
    traj = Trajectory.from_poses([graph.nodes[i] for i in range(n)], timestamps=dataset.timestamps)

    if volume is not None and cfg["tsdf.refuse"]:
        with clock("tsdf"):
            volume = new_volume(cfg)
            for i in range(n):
                img = dataset.rgb(i)
                integrate(volume, depth_est(i, img), traj.poses[i], k, color=img if volume.has_color else None, inplace=True)
        stats.tsdf_frames = n
    if volume is not None:
        stats.tsdf_clipped_points = int(volume.clipped_points)
    return SlamResult(traj, volume, stats, graph)


def write_outputs(result: SlamResult, out_dir, save_tsdf: bool = False) -> dict[str, Path]:
    """``trajectory.txt``, ``surface.ply`` (when fused), ``stats.txt`` and optionally ``volume.tsdf``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trajectory": out / "trajectory.txt", "stats": out / "stats.txt"}
    save_trajectory(result.trajectory, paths["trajectory"])
    if result.volume is not None:
        cloud = extract_surface(result.volume)
        result.stats.surface_points = len(cloud)
        paths["surface"] = out / "surface.ply"
        write_ply(paths["surface"], cloud)
        if save_tsdf:
            paths["volume"] = out / "volume.tsdf"
            save_volume(paths["volume"], result.volume)
    # timings vary run to run, so they sit below the deterministic counters
    paths["stats"].write_text(format_report(result.stats.as_dict()))
    return paths
