"""Pluggable relative-pose and depth estimators.

A pose estimator maps a frame pair to the motion of the second camera in the
first camera's frame, with unit-norm translation and the unscaled flag. A
depth estimator maps a frame to a :class:`DepthMap` in meters. Learned models
plug in through the same protocols; this module ships ground-truth oracles
and importers for precomputed outputs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import numpy as np

from .camera import DepthMap
from .dataset import Dataset, frame_paths
from .errors import ConfigError, DataError, OutOfBounds
from .formats import load_depth, load_trajectory
from .geometry import Pose, relative
from .synth import DepthNoise, PoseNoise, oracle_depth, oracle_pose
from .trajectory import Trajectory


class PoseEstimator(Protocol):
    def __call__(self, i: int, rgb_a: np.ndarray, rgb_b: np.ndarray) -> Pose:
        """Motion from frame ``i`` to frame ``i + 1``, flagged unscaled."""


class DepthEstimator(Protocol):
    def __call__(self, i: int, rgb: np.ndarray) -> DepthMap: ...


def _unscaled(rel: Pose) -> Pose:
    n = np.linalg.norm(rel.translation)
    t = rel.translation / n if n > 0 else np.zeros(3)
    return Pose(rel.rotation, t, scaled=False)


class OraclePoseEstimator:
    def __init__(self, gt: Trajectory, noise: PoseNoise = PoseNoise(), seed: int = 0):
        self.gt, self.noise, self.seed = gt, noise, seed

    def __call__(self, i, rgb_a=None, rgb_b=None) -> Pose:
        return oracle_pose(self.gt, i, self.noise, self.seed)


class ImportedPoseEstimator:
    """Relative motions of a precomputed trajectory, scale discarded."""

    def __init__(self, traj: Trajectory):
        self.traj = traj

    @classmethod
    def from_file(cls, path) -> "ImportedPoseEstimator":
        return cls(load_trajectory(path))

    def __call__(self, i, rgb_a=None, rgb_b=None) -> Pose:
        if not 0 <= i < len(self.traj) - 1:
            raise OutOfBounds(f"imported trajectory has no motion {i} -> {i + 1}")
        return _unscaled(relative(self.traj.poses[i], self.traj.poses[i + 1]))


class OracleDepthEstimator:
    """Dataset depth with log-normal noise and dropout; frame ``i`` draws from its own stream."""

    def __init__(self, dataset: Dataset, noise: DepthNoise = DepthNoise(), seed: int = 0):
        if not dataset.has_depth:
            raise ConfigError("depth.source = oracle needs depth maps in the dataset")
        self.dataset, self.noise, self.seed = dataset, noise, seed

    def __call__(self, i, rgb=None) -> DepthMap:
        gt = self.dataset.depth(i)
        return oracle_depth(gt, self.noise, seed=self.seed * 1_000_003 + i)


class ImportedDepthEstimator:
    def __init__(self, directory):
        self.paths = frame_paths(directory)
        if not self.paths:
            raise ConfigError(f"no depth maps in {directory}")

    def __call__(self, i, rgb=None) -> DepthMap:
        if not 0 <= i < len(self.paths):
            raise DataError(f"frame {i}: no imported depth map")
        try:
            return load_depth(self.paths[i])
        except DataError as exc:
            raise DataError(f"frame {i}: {exc}") from None


def pose_estimator_from_config(cfg, dataset: Dataset) -> PoseEstimator:
    if cfg["pose.source"] == "oracle":
        if dataset.groundtruth is None:
            raise ConfigError("pose.source = oracle needs groundtruth.txt in the dataset")
        noise = PoseNoise(cfg["oracle.rot_sigma_deg"], cfg["oracle.dir_sigma_deg"])
        return OraclePoseEstimator(dataset.groundtruth, noise, cfg["seed"])
    path = cfg["pose.import_path"]
    if not path or not Path(path).is_file():
        raise ConfigError(f"pose.import_path {path!r} is not a file")
    est = ImportedPoseEstimator.from_file(path)
    if len(est.traj) != len(dataset):
        raise DataError(f"imported trajectory has {len(est.traj)} poses for {len(dataset)} frames")
    return est


def depth_estimator_from_config(cfg, dataset: Dataset) -> DepthEstimator:
    if cfg["depth.source"] == "oracle":
        noise = DepthNoise(cfg["oracle.depth_sigma"], cfg["oracle.dropout"])
        return OracleDepthEstimator(dataset, noise, cfg["seed"])
    d = cfg["depth.import_dir"]
    if not d or not Path(d).is_dir():
        raise ConfigError(f"depth.import_dir {d!r} is not a directory")
    est = ImportedDepthEstimator(d)
    if len(est.paths) != len(dataset):
        raise DataError(f"{len(est.paths)} imported depth maps for {len(dataset)} frames")
    return est
