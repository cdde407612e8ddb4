"""On-disk sequence layout.

::

    root/
      calib.txt          fx fy cx cy width height
      groundtruth.txt    TUM trajectory, one line per frame (optional)
      rgb/000000.png ...
      depth/000000.png   16-bit millimeters, or
      depth/000000.pfm   float meters
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, DepthMap
from .errors import ConfigError, DataError
from .formats import load_calib, load_depth, load_rgb, load_trajectory, save_calib, save_depth, save_rgb, save_trajectory
from .trajectory import Trajectory

_FRAME = re.compile(r"^(\d{6})\.(png|pfm)$")


def _frames(directory: Path, exts: tuple[str, ...]) -> dict[int, Path]:
    out: dict[int, Path] = {}
    for p in directory.iterdir():
        m = _FRAME.match(p.name)
        if m and m.group(2) in exts:
            i = int(m.group(1))
            if i in out:
                raise DataError(f"frame {i} appears twice in {directory}")
            out[i] = p
    return out


def frame_paths(directory, exts=("png", "pfm")) -> list[Path]:
    """Frame files ``%06d.<ext>`` in index order; indices must run 0..N-1."""
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError(f"{d} is not a directory")
    found = _frames(d, tuple(exts))
    idx = sorted(found)
    if idx != list(range(len(idx))):
        missing = sorted(set(range(max(idx) + 1)) - set(idx)) if idx else []
        raise DataError(f"{d}: frame numbering has gaps (first missing {missing[0]:06d})")
    return [found[i] for i in idx]


class Dataset:
    """Lazy view of a sequence directory. Frames are read on demand."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ConfigError(f"dataset directory {self.root} does not exist")
        calib = self.root / "calib.txt"
        if not calib.is_file():
            raise ConfigError(f"{calib} is missing")
        self.intrinsics: CameraIntrinsics = load_calib(calib)
        rgb_dir = self.root / "rgb"
        self.rgb_paths = frame_paths(rgb_dir, ("png",)) if rgb_dir.is_dir() else []
        if not self.rgb_paths:
            raise ConfigError(f"dataset {self.root} has no frames under rgb/")
        n = len(self.rgb_paths)
        depth_dir = self.root / "depth"
        self.depth_paths = frame_paths(depth_dir) if depth_dir.is_dir() else []
        if self.depth_paths and len(self.depth_paths) != n:
            raise DataError(f"{n} rgb frames but {len(self.depth_paths)} depth frames")
        gt = self.root / "groundtruth.txt"
        self.groundtruth: Trajectory | None = load_trajectory(gt) if gt.is_file() else None
        if self.groundtruth is not None and len(self.groundtruth) != n:
            raise DataError(f"{n} rgb frames but {len(self.groundtruth)} ground-truth poses")

    def __len__(self) -> int:
        return len(self.rgb_paths)

    @property
    def has_depth(self) -> bool:
        return bool(self.depth_paths)

    @property
    def timestamps(self) -> np.ndarray:
        if self.groundtruth is not None:
            return np.asarray(self.groundtruth.timestamps)
        return np.arange(len(self), dtype=np.float64)

    def rgb(self, i: int) -> np.ndarray:
        try:
            img = load_rgb(self.rgb_paths[i])
        except DataError as exc:
            raise DataError(f"frame {i}: {exc}") from None
        k = self.intrinsics
        if img.shape[:2] != (k.height, k.width):
            raise DataError(f"frame {i}: image is {img.shape[1]}x{img.shape[0]}, calibration says {k.width}x{k.height}")
        return img

    def depth(self, i: int) -> DepthMap:
        if not self.depth_paths:
            raise DataError("dataset has no depth maps")
        try:
            d = load_depth(self.depth_paths[i])
        except DataError as exc:
            raise DataError(f"frame {i}: {exc}") from None
        k = self.intrinsics
        if d.shape != (k.height, k.width):
            raise DataError(f"frame {i}: depth is {d.width}x{d.height}, calibration says {k.width}x{k.height}")
        return DepthMap(d.values, d.valid, k)


def write_dataset(root, rgb, depth, trajectory: Trajectory | None, k: CameraIntrinsics, depth_format: str = "pfm") -> Path:
    """Write frames in the canonical layout; returns the root path."""
    if depth_format not in ("png", "pfm"):
        raise ConfigError(f"depth format must be png or pfm, got {depth_format!r}")
    root = Path(root)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(exist_ok=True)
    save_calib(root / "calib.txt", k)
    for i, img in enumerate(rgb):
        save_rgb(root / "rgb" / f"{i:06d}.png", img)
    for i, d in enumerate(depth):
        save_depth(root / "depth" / f"{i:06d}.{depth_format}", d)
    if trajectory is not None:
        save_trajectory(trajectory, root / "groundtruth.txt")
    return root
