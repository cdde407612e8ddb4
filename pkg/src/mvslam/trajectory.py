"""Time-indexed pose sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidArgument
from .geometry import Pose, is_rotation


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered ``(frame_id, timestamp, Pose)`` triples with increasing timestamps."""

    frame_ids: tuple[int, ...]
    timestamps: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.frame_ids)
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        poses = tuple(self.poses)
        if not (len(ids) == len(ts) == len(poses)):
            raise InvalidArgument("frame_ids, timestamps and poses must have equal length")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise InvalidArgument("trajectory timestamps must be strictly increasing")
        for p in poses:
            if not is_rotation(p.rotation, 1e-6) or not np.all(np.isfinite(p.translation)):
                raise InvalidArgument("trajectory contains an invalid pose")
        ts.setflags(write=False)
        object.__setattr__(self, "frame_ids", ids)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], timestamps=None, frame_ids=None) -> "Trajectory":
        n = len(poses)
        if timestamps is None:
            timestamps = np.arange(n, dtype=np.float64)
        if frame_ids is None:
            frame_ids = range(n)
        return cls(tuple(frame_ids), timestamps, tuple(poses))

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self) -> Iterator[tuple[int, float, Pose]]:
        return iter(zip(self.frame_ids, self.timestamps.tolist(), self.poses))

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    @property
    def rotations(self) -> np.ndarray:
        return np.array([p.rotation for p in self.poses]).reshape(-1, 3, 3)

    def transformed(self, left: Pose, scale: float = 1.0) -> "Trajectory":
        """Apply ``x -> left * (scale * x)`` to every pose (a similarity on positions)."""
        poses = [
            Pose(left.rotation @ p.rotation, scale * (left.rotation @ p.translation) + left.translation, p.scaled)
            for p in self.poses
        ]
        return Trajectory(self.frame_ids, self.timestamps, tuple(poses))

    def relative_motions(self) -> list[Pose]:
        return [a.inverse().compose(b) for a, b in zip(self.poses[:-1], self.poses[1:])]


def associate(est: Trajectory, gt: Trajectory) -> tuple[list[Pose], list[Pose], list[int]]:
    """Pairs of poses sharing a frame id, in ``est`` order."""
    lookup = {fid: p for fid, _, p in gt}
    e, g, ids = [], [], []
    for fid, _, p in est:
        if fid in lookup:
            e.append(p)
            g.append(lookup[fid])
            ids.append(fid)
    return e, g, ids


def associate_by_time(est: Trajectory, gt: Trajectory, max_dt: float = 0.01) -> tuple[Trajectory, Trajectory]:
    """Re-label both trajectories so that nearest timestamps share frame ids.

    Greedy one-to-one matching on ``|t_est - t_gt| < max_dt``.
    """
    gts = gt.timestamps
    used = set()
    ei, gi = [], []
    for i, t in enumerate(est.timestamps):
        j = int(np.searchsorted(gts, t))
        best = None
        for c in (j - 1, j):
            if 0 <= c < len(gts) and c not in used and abs(gts[c] - t) < max_dt:
                if best is None or abs(gts[c] - t) < abs(gts[best] - t):
                    best = c
        if best is not None:
            used.add(best)
            ei.append(i)
            gi.append(best)
    ids = tuple(range(len(ei)))
    e = Trajectory(ids, est.timestamps[ei], tuple(est.poses[i] for i in ei))
    g = Trajectory(ids, gt.timestamps[gi], tuple(gt.poses[i] for i in gi))
    return e, g
