"""Pinhole intrinsics, depth maps and (back-)projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgument("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def default(cls, width: int = 320, height: int = 240, f: float = 260.0) -> "CameraIntrinsics":
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


class DepthMap:
    """Dense z-depth in meters with a validity mask.

    Pixels that are non-finite or non-positive are always invalid, whatever
    mask is passed in.
    """

    def __init__(self, values, valid=None, intrinsics: CameraIntrinsics | None = None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidArgument(f"depth map must be 2-D, got shape {values.shape}")
        ok = np.isfinite(values) & (values > 0)
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != values.shape:
                raise InvalidArgument("valid mask shape does not match depth values")
            ok &= valid
        values[~ok] = 0.0
        self.values = values
        self.valid = ok
        self.intrinsics = intrinsics

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def count(self) -> int:
        return int(self.valid.sum())

    def sample(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear depth at sub-pixel locations.

        Returns ``(depth, ok)``; ``ok`` is False where any of the four taps is
        invalid or outside the image.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        u0 = np.floor(u).astype(np.int64)
        v0 = np.floor(v).astype(np.int64)
        inside = (u0 >= 0) & (v0 >= 0) & (u0 + 1 < self.width) & (v0 + 1 < self.height)
        u0c = np.clip(u0, 0, self.width - 2)
        v0c = np.clip(v0, 0, self.height - 2)
        au = u - u0c
        av = v - v0c
        d = self.values
        m = self.valid
        ok = inside & m[v0c, u0c] & m[v0c, u0c + 1] & m[v0c + 1, u0c] & m[v0c + 1, u0c + 1]
        z = (
            d[v0c, u0c] * (1 - au) * (1 - av)
            + d[v0c, u0c + 1] * au * (1 - av)
            + d[v0c + 1, u0c] * (1 - au) * av
            + d[v0c + 1, u0c + 1] * au * av
        )
        return np.where(ok, z, 0.0), ok


def back_project(u, v, depth, k: CameraIntrinsics) -> np.ndarray:
    """Pixel plus z-depth to a camera-frame point ``((u-cx)d/fx, (v-cy)d/fy, d)``.

    Accepts scalars or equal-shaped arrays; returns ``(..., 3)``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise InvalidArgument("depth must be positive for back-projection")
    return np.stack([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d], axis=-1)


def project(points, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-frame points ``(..., 3)`` to ``(u, v, z)``."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * p[..., 0] / z + k.cx
        v = k.fy * p[..., 1] / z + k.cy
    return u, v, z


def pixel_rays(k: CameraIntrinsics, supersample: int = 1) -> np.ndarray:
    """Camera-frame ray directions with unit z for every pixel, ``(H, W, 3)``.

    With ``supersample > 1`` the result is ``(H, W, s*s, 3)`` with rays through
    a regular sub-pixel grid.
    """
    if supersample <= 1:
        u, v = np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64))
        return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    s = supersample
    offs = (np.arange(s) + 0.5) / s - 0.5
    ou, ov = np.meshgrid(offs, offs)
    u, v = np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64))
    uu = u[..., None] + ou.reshape(-1)
    vv = v[..., None] + ov.reshape(-1)
    return np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
