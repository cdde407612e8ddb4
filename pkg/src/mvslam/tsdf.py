"""Truncated signed distance volume: integration, queries, surface readout, I/O.

Signed distances are positive in front of the surface (camera side) and are
stored normalised by the truncation distance, so ``tsdf`` lies in ``[-1, 1]``.
A voxel with zero weight has never been observed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, DepthMap, back_project
from .errors import FormatError, InvalidArgument, OutOfBounds
from .geometry import Pose
from .kernels import tsdf as K

MAX_VOXELS = 512**3
MAGIC = b"TSDF1"
# dims (3 x int32), origin (3 x f64), voxel_size, trunc, w_max (f64), has_color (u8)
_HEADER = struct.Struct("<3i3d3dB")


class TsdfVolume:
    def __init__(
        self,
        origin,
        voxel_size: float,
        dims,
        trunc: float | None = None,
        w_max: float = 64.0,
        with_color: bool = False,
    ):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 2:
            raise InvalidArgument(f"dims must be three counts >= 2, got {dims}")
        if int(np.prod(dims, dtype=np.int64)) > MAX_VOXELS:
            raise InvalidArgument(f"volume {dims} exceeds the 512^3 voxel guard")
        if not voxel_size > 0:
            raise InvalidArgument("voxel_size must be positive")
        trunc = 4.0 * voxel_size if trunc is None else float(trunc)
        if trunc < 2.0 * voxel_size:
            raise InvalidArgument("truncation must be at least two voxels")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3).copy()
        self.voxel_size = float(voxel_size)
        self.dims = dims
        self.trunc = trunc
        self.w_max = float(w_max)
        self.tsdf = np.zeros(dims)
        self.weight = np.zeros(dims)
        self.rgb = np.zeros(dims + (3,)) if with_color else np.zeros((0, 0, 0, 3))
        self.frames = 0
        self.clipped_points = 0

    @classmethod
    def around(cls, center, half_extent: float, voxel_size: float, **kw) -> "TsdfVolume":
        n = int(np.ceil(2.0 * half_extent / voxel_size)) + 1
        origin = np.asarray(center, dtype=np.float64) - 0.5 * (n - 1) * voxel_size
        return cls(origin, voxel_size, (n, n, n), **kw)

    @property
    def has_color(self) -> bool:
        return self.rgb.shape[0] == self.dims[0]

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.dims) - 1) * self.voxel_size

    def grid_point(self, i, j, k) -> np.ndarray:
        return self.origin + np.array([i, j, k], dtype=np.float64) * self.voxel_size

    def grid_points(self) -> np.ndarray:
        """World coordinates of every grid point, shape ``dims + (3,)``."""
        axes = [self.origin[a] + np.arange(self.dims[a]) * self.voxel_size for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def copy(self) -> "TsdfVolume":
        out = TsdfVolume.__new__(TsdfVolume)
        out.__dict__.update(self.__dict__)
        out.origin = self.origin.copy()
        out.tsdf = self.tsdf.copy()
        out.weight = self.weight.copy()
        out.rgb = self.rgb.copy()
        return out


def integrate(
    v: TsdfVolume,
    depth: DepthMap,
    pose: Pose,
    k: CameraIntrinsics,
    trunc: float | None = None,
    color=None,
    inplace: bool = False,
) -> TsdfVolume:
    """Fuse one depth map seen from camera-to-world ``pose``.

    Every grid point in front of the camera is projected to its nearest pixel
    and, when that pixel is valid, receives ``clip(depth - z_cam, -trunc, trunc) / trunc``
    through the running average with unit weight.
    """
    if not pose.scaled:
        raise InvalidArgument("refusing to integrate with an unscaled pose")
    trunc = v.trunc if trunc is None else float(trunc)
    if trunc < 2.0 * v.voxel_size:
        raise InvalidArgument("truncation must be at least two voxels")
    if depth.shape != (k.height, k.width):
        raise InvalidArgument("depth map size does not match intrinsics")
    out = v if inplace else v.copy()

    cam_from_world = pose.inverse()
    if color is not None and out.has_color:
        col = np.ascontiguousarray(color, dtype=np.float64)
    else:
        col = np.zeros((0, 0, 3))
    K.integrate(
        out.tsdf, out.weight, out.rgb, out.origin, out.voxel_size,
        np.ascontiguousarray(cam_from_world.rotation), np.ascontiguousarray(cam_from_world.translation),
        k.fx, k.fy, k.cx, k.cy,
        depth.values, depth.valid, col, trunc, out.w_max,
    )  # fmt: skip

    if depth.count():
        vv, uu = np.nonzero(depth.valid)
        pts = pose.apply(back_project(uu, vv, depth.values[vv, uu], k))
        outside = np.any((pts < out.origin) | (pts > out.upper), axis=1)
        out.clipped_points += int(outside.sum())
    out.frames += 1
    return out


def query_sdf(v: TsdfVolume, p) -> tuple[float, float]:
    """Trilinear tsdf at a world point and the minimum weight of the 8 corners."""
    f = (np.asarray(p, dtype=np.float64).reshape(3) - v.origin) / v.voxel_size
    dims = np.array(v.dims)
    if np.any(f < 0.0) or np.any(f > dims - 1):
        raise OutOfBounds(f"point {p} is outside the volume")
    i0 = np.minimum(np.floor(f).astype(np.int64), dims - 2)
    a = f - i0
    val = 0.0
    wmin = np.inf
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                c = (i0[0] + di, i0[1] + dj, i0[2] + dk)
                wt = (a[0] if di else 1 - a[0]) * (a[1] if dj else 1 - a[1]) * (a[2] if dk else 1 - a[2])
                val += wt * v.tsdf[c]
                wmin = min(wmin, v.weight[c])
    return float(val), float(wmin)


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)


def extract_surface(v: TsdfVolume, min_weight: float = 1.0) -> PointCloud:
    """One point per grid edge whose endpoints change sign and both carry ``>= min_weight``."""
    pts, cols = K.extract(v.tsdf, v.weight, v.rgb, v.origin, v.voxel_size, float(min_weight))
    return PointCloud(pts, cols if v.has_color else None)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def write_ply(path, cloud: PointCloud) -> None:
    """Binary little-endian PLY: float32 x,y,z and optional uchar red,green,blue."""
    n = len(cloud.points)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    color = cloud.colors is not None and len(cloud.colors) == n
    if color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = cloud.points.T if n else ([], [], [])
    if color and n:
        c = np.clip(np.rint(cloud.colors), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = c.T
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {a}" for a in "xyz"]
    if color:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "binary_little_endian" not in header[1]:
        raise FormatError("only binary little-endian PLY is supported")
    n = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    props = [line.split()[2] for line in header if line.startswith("property")]
    fields = [(p, "<f4" if p in "xyz" else "u1") for p in props]
    rec = np.frombuffer(data, dtype=fields, count=n, offset=end)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) if "red" in props else None
    return PointCloud(pts, cols)


def save_volume(path, v: TsdfVolume) -> None:
    """``TSDF1`` magic, fixed header, then float64 tsdf, weight and (optionally) rgb in C order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*v.dims, *v.origin, v.voxel_size, v.trunc, v.w_max, int(v.has_color)))
        fh.write(v.tsdf.astype("<f8").tobytes())
        fh.write(v.weight.astype("<f8").tobytes())
        if v.has_color:
            fh.write(v.rgb.astype("<f8").tobytes())


def load_volume(path) -> TsdfVolume:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a TSDF1 volume file")
    off = len(MAGIC)
    nx, ny, nz, ox, oy, oz, vs, trunc, w_max, has_color = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    v = TsdfVolume((ox, oy, oz), vs, (nx, ny, nz), trunc=trunc, w_max=w_max, with_color=bool(has_color))
    n = nx * ny * nz
    need = off + 8 * n * (2 + (3 if has_color else 0))
    if len(data) != need:
        raise FormatError(f"TSDF1 payload has {len(data)} bytes, expected {need}")
    v.tsdf = np.frombuffer(data, "<f8", n, off).reshape(nx, ny, nz).copy()
    v.weight = np.frombuffer(data, "<f8", n, off + 8 * n).reshape(nx, ny, nz).copy()
    if has_color:
        v.rgb = np.frombuffer(data, "<f8", 3 * n, off + 16 * n).reshape(nx, ny, nz, 3).copy()
    return v
