"""Readers and writers for trajectories, depth maps, images and intrinsics."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, DepthMap
from .errors import DataError, FormatError, InvalidArgument, ParseError
from .geometry import Pose, Quaternion, quat_to_rot, rot_to_quat
from .trajectory import Trajectory

# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------

TUM_HEADER = "# timestamp tx ty tz qx qy qz qw"


def format_tum_line(ts: float, p: Pose) -> str:
    q = rot_to_quat(p.rotation)
    vals = (*p.translation, q.x, q.y, q.z, q.w)
    # '+ 0.0' turns -0.0 into 0.0 so equal poses always print identically
    return f"{ts:.9f} " + " ".join(f"{v + 0.0:.9g}" for v in vals)


def save_trajectory(traj: Trajectory, path) -> None:
    """TUM text: nanosecond timestamps, 9 significant digits for pose values."""
    lines = [TUM_HEADER] + [format_tum_line(t, p) for _, t, p in traj]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_trajectory(text: str) -> Trajectory:
    ts, poses = [], []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", no)
        try:
            t, x, y, z, qx, qy, qz, qw = (float(v) for v in parts)
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", no) from None
        try:
            R = quat_to_rot(Quaternion(qw, qx, qy, qz))
            pose = Pose(R, [x, y, z])
        except InvalidArgument as exc:
            raise ParseError(str(exc), no) from None
        if ts and t <= ts[-1]:
            raise ParseError(f"timestamp {t} does not increase", no)
        ts.append(t)
        poses.append(pose)
    return Trajectory.from_poses(poses, timestamps=ts)


def load_trajectory(path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read trajectory {path}: {exc.strerror}") from None
    try:
        return parse_trajectory(text)
    except ParseError as exc:
        raise ParseError(exc.message, exc.line, path) from None


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------

PNG_DEPTH_SCALE = 1000.0  # stored units per meter


def _read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind == b"PF":
            raise FormatError(f"{path}: colour PFM cannot hold a depth map")
        if kind != b"Pf":
            raise FormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        try:
            w, h = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except (ValueError, IndexError):
            raise FormatError(f"{path}: malformed PFM header") from None
        if w <= 0 or h <= 0 or scale == 0.0:
            raise FormatError(f"{path}: malformed PFM header")
        dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        data = np.frombuffer(f.read(), dtype=dt)
    if data.size != w * h:
        raise FormatError(f"{path}: expected {w * h} samples, found {data.size}")
    # rows are stored bottom to top
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def _write_pfm(path, values: np.ndarray) -> None:
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(values).astype("<f4").tobytes())


def _read_png16(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.array(im)
    except OSError as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from None
    if not (mode.startswith("I;16") or mode == "I"):
        raise FormatError(f"{path}: depth PNG must be 16-bit single channel, got mode {mode}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 65535:
        raise FormatError(f"{path}: values outside the 16-bit range")
    return arr.astype(np.float64)


def load_depth(path, fmt: str | None = None) -> DepthMap:
    """16-bit PNG in millimeters (0 = invalid) or single-channel PFM in meters."""
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if not os.path.exists(path):
        raise DataError(f"depth file {path} does not exist")
    if fmt == "png":
        raw = _read_png16(path)
        return DepthMap(raw / PNG_DEPTH_SCALE, raw > 0)
    if fmt == "pfm":
        return DepthMap(_read_pfm(path))
    raise FormatError(f"unsupported depth format {fmt!r}")


def save_depth(path, depth: DepthMap, fmt: str | None = None) -> None:
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    vals = np.where(depth.valid, depth.values, 0.0)
    if fmt == "png":
        mm = np.rint(vals * PNG_DEPTH_SCALE)
        if mm.max(initial=0) > 65535:
            raise InvalidArgument("depth exceeds the 65.535 m range of 16-bit millimeters")
        Image.fromarray(mm.astype(np.uint16)).save(path)
    elif fmt == "pfm":
        _write_pfm(path, vals)
    else:
        raise FormatError(f"unsupported depth format {fmt!r}")


# ---------------------------------------------------------------------------
# colour images
# ---------------------------------------------------------------------------


def load_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def save_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


# ---------------------------------------------------------------------------
# intrinsics
# ---------------------------------------------------------------------------


def parse_calib(text: str) -> CameraIntrinsics:
    rows = [(no, ln.split()) for no, ln in enumerate(text.splitlines(), 1) if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) != 1:
        raise ParseError(f"expected one line 'fx fy cx cy width height', found {len(rows)}", rows[1][0] if rows else 1)
    no, parts = rows[0]
    if len(parts) != 6:
        raise ParseError(f"expected 6 fields, got {len(parts)}", no)
    try:
        fx, fy, cx, cy = (float(v) for v in parts[:4])
        w, h = float(parts[4]), float(parts[5])
    except ValueError as exc:
        raise ParseError(f"non-numeric field ({exc})", no) from None
    if w != int(w) or h != int(h):
        raise ParseError("width and height must be integers", no)
    try:
        return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    except InvalidArgument as exc:
        raise ParseError(str(exc), no) from None


def load_calib(path) -> CameraIntrinsics:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read calibration {path}: {exc.strerror}") from None
    try:
        return parse_calib(text)
    except ParseError as exc:
        raise ParseError(exc.message, exc.line, path) from None


def save_calib(path, k: CameraIntrinsics) -> None:
    Path(path).write_text(f"{k.fx:.9g} {k.fy:.9g} {k.cx:.9g} {k.cy:.9g} {k.width} {k.height}\n")
