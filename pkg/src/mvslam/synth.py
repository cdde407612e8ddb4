"""Synthetic scenes with exact ground truth, plus oracle estimators.

A scene is the interior of an analytic primitive, a parametric camera path
and a pinhole camera. Depth comes from closed-form ray intersection, colour
from a solid texture evaluated at the hit point. The oracle estimators
perturb ground truth in a controlled way so the rest of the system can be
exercised without learned models.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, DepthMap, pixel_rays
from .errors import InvalidArgument, OutOfBounds
from .geometry import Pose, relative, se3_exp, so3_exp
from .kernels import texture as _tex
from .pose_graph import PoseGraph, odometry_information
from .trajectory import Trajectory

# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


class Primitive:
    """Closed surface seen from inside (or the positive side of a plane)."""

    def contains(self, p) -> np.ndarray:
        raise NotImplementedError

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Smallest positive ray parameter for rays ``origin + s * dirs``; inf on a miss."""
        raise NotImplementedError

    def normal(self, points: np.ndarray) -> np.ndarray:
        """Unit normals pointing into the free space."""
        raise NotImplementedError


@dataclass(frozen=True)
class SphereInterior(Primitive):
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.06

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidArgument("sphere radius must be positive")

    def contains(self, p):
        p = np.asarray(p, dtype=np.float64)
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) < self.radius

    def intersect(self, origin, dirs):
        oc = np.asarray(origin, dtype=np.float64) - np.asarray(self.center)
        a = np.einsum("...i,...i->...", dirs, dirs)
        b = np.einsum("...i,i->...", dirs, oc)
        c = oc @ oc - self.radius**2
        disc = b * b - a * c
        with np.errstate(invalid="ignore"):
            s = (-b + np.sqrt(disc)) / a
        return np.where((disc >= 0) & (s > 0), s, np.inf)

    def normal(self, points):
        d = np.asarray(self.center) - points
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class BoxInterior(Primitive):
    lo: tuple = (-0.05, -0.05, -0.05)
    hi: tuple = (0.05, 0.05, 0.05)

    def __post_init__(self):
        if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
            raise InvalidArgument("box needs hi > lo on every axis")

    def contains(self, p):
        p = np.asarray(p, dtype=np.float64)
        return np.all((p > np.asarray(self.lo)) & (p < np.asarray(self.hi)), axis=-1)

    def _exits(self, origin, dirs):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dirs > 0, (hi - origin) / dirs, np.where(dirs < 0, (lo - origin) / dirs, np.inf))
        return s

    def intersect(self, origin, dirs):
        return self._exits(np.asarray(origin, dtype=np.float64), dirs).min(axis=-1)

    def normal(self, points):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        gap = np.concatenate([points - lo, hi - points], axis=-1)
        k = np.argmin(np.abs(gap), axis=-1)
        n = np.zeros(points.shape)
        axis = k % 3
        sign = np.where(k < 3, 1.0, -1.0)
        np.put_along_axis(n, axis[..., None], sign[..., None], axis=-1)
        return n


@dataclass(frozen=True)
class Plane(Primitive):
    point: tuple = (0.0, 0.0, 0.05)
    normal_vec: tuple = (0.0, 0.0, -1.0)

    def __post_init__(self):
        if not np.linalg.norm(self.normal_vec) > 0:
            raise InvalidArgument("plane normal must be non-zero")

    @property
    def _n(self):
        n = np.asarray(self.normal_vec, dtype=np.float64)
        return n / np.linalg.norm(n)

    def contains(self, p):
        p = np.asarray(p, dtype=np.float64)
        return (p - np.asarray(self.point)) @ self._n > 0

    def intersect(self, origin, dirs):
        n = self._n
        den = dirs @ n
        num = (np.asarray(self.point) - np.asarray(origin, dtype=np.float64)) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / den
        return np.where((den < 0) & (s > 0), s, np.inf)

    def normal(self, points):
        return np.broadcast_to(self._n, points.shape).copy()


# ---------------------------------------------------------------------------
# camera paths
# ---------------------------------------------------------------------------


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class ArcPath:
    """Circle of ``radius`` in the z = ``height`` plane, optical axis tilted off +z and coning with the arc."""

    radius: float = 0.015
    n_frames: int = 120
    sweep_deg: float = 90.0
    tilt_deg: float = 20.0
    height: float = 0.0

    def poses(self, seed: int = 0) -> list[Pose]:
        out = []
        tilt = math.radians(self.tilt_deg)
        for k in range(self.n_frames):
            th = math.radians(self.sweep_deg) * k / max(1, self.n_frames - 1)
            p = [self.radius * math.cos(th), self.radius * math.sin(th), self.height]
            out.append(Pose(_rot_z(th) @ _rot_x(tilt), p))
        return out


@dataclass(frozen=True)
class HelixPath:
    radius: float = 0.012
    n_frames: int = 120
    turns: float = 1.0
    rise: float = 0.01
    tilt_deg: float = 20.0

    def poses(self, seed: int = 0) -> list[Pose]:
        out = []
        tilt = math.radians(self.tilt_deg)
        for k in range(self.n_frames):
            f = k / max(1, self.n_frames - 1)
            th = 2 * math.pi * self.turns * f
            p = [self.radius * math.cos(th), self.radius * math.sin(th), self.rise * (f - 0.5)]
            out.append(Pose(_rot_z(th) @ _rot_x(tilt), p))
        return out


@dataclass(frozen=True)
class RandomWalkPath:
    """Body-frame twists with bounded rotation; steps that would leave a ball of ``bound`` are redrawn."""

    n_frames: int = 120
    step: float = 2e-4
    max_rot_deg: float = 1.0
    bound: float = 0.02

    def poses(self, seed: int = 0) -> list[Pose]:
        rng = np.random.default_rng([seed, 7])
        cur = Pose()
        out = [cur]
        lim = math.radians(self.max_rot_deg)
        while len(out) < self.n_frames:
            for _ in range(1000):
                w = rng.uniform(-lim, lim, 3)
                v = rng.normal(size=3)
                v *= self.step / np.linalg.norm(v)
                nxt = cur @ Pose(so3_exp(w), v)
                if np.linalg.norm(nxt.translation) < self.bound:
                    break
            else:  # pragma: no cover - the ball is never that small relative to a step
                raise InvalidArgument("random walk could not stay within its bound")
            cur = nxt
            out.append(cur)
        return out


# ---------------------------------------------------------------------------
# texture
# ---------------------------------------------------------------------------

def value_noise(p: np.ndarray, cell: float, seed: int) -> np.ndarray:
    """Trilinearly interpolated lattice noise in [0, 1) with smoothstep weights."""
    return _tex.value_noise(np.asarray(p, dtype=np.float64), cell, seed)


@dataclass(frozen=True)
class Texture:
    cell: float = 0.004
    noise_cell: float = 0.0015
    contrast: float = 0.6
    noise_amp: float = 0.3
    ambient: float = 0.25
    tint: tuple = (1.0, 0.78, 0.66)

    def albedo(self, p: np.ndarray, seed: int) -> np.ndarray:
        c = np.floor(p / self.cell).astype(np.int64)
        parity = (c.sum(axis=-1) & 1).astype(np.float64)
        n = value_noise(p, self.noise_cell, seed)
        a = 0.5 + self.contrast * (parity - 0.5) + self.noise_amp * (n - 0.5)
        return np.clip(a, 0.0, 1.0)


# ---------------------------------------------------------------------------
# scene and rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticScene:
    geometry: Primitive = field(default_factory=SphereInterior)
    path: object = field(default_factory=ArcPath)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics.default)
    texture: Texture = field(default_factory=Texture)
    supersample: int = 2
    fps: float = 30.0


@dataclass
class SyntheticSequence:
    rgb: list
    depth: list
    trajectory: Trajectory
    intrinsics: CameraIntrinsics

    def __len__(self) -> int:
        return len(self.rgb)


def render_depth(geometry: Primitive, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    """z-depth of the first surface hit through every pixel centre, ``(H, W)``."""
    rays = pixel_rays(k) @ pose.rotation.T  # unit camera z, so the ray parameter is the depth
    return geometry.intersect(pose.translation, rays)


def render_rgb(scene: SyntheticScene, pose: Pose, seed: int) -> np.ndarray:
    k = scene.intrinsics
    s = max(1, int(scene.supersample))
    rays = pixel_rays(k, s).reshape(k.height, k.width, -1, 3) @ pose.rotation.T
    hit_s = scene.geometry.intersect(pose.translation, rays)
    if not np.all(np.isfinite(hit_s)):
        raise InvalidArgument("some pixels see no surface")
    pts = pose.translation + hit_s[..., None] * rays
    n = scene.geometry.normal(pts)
    view = -rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    lam = np.clip(np.einsum("...i,...i->...", n, view), 0.0, 1.0)
    tex = scene.texture
    shade = tex.ambient + (1.0 - tex.ambient) * lam
    g = (tex.albedo(pts, seed) * shade).mean(axis=-1)
    rgb = g[..., None] * np.asarray(tex.tint)
    return np.clip(np.rint(255.0 * rgb), 0, 255).astype(np.uint8)


def generate_sequence(scene: SyntheticScene, seed: int = 0, workers: int = 1) -> SyntheticSequence:
    """Render every frame of ``scene``; frames are independent so ``workers`` may exceed 1."""
    poses = scene.path.poses(seed)
    for i, p in enumerate(poses):
        if not bool(scene.geometry.contains(p.translation)):
            raise InvalidArgument(f"camera {i} at {p.translation} is outside the scene geometry")
    k = scene.intrinsics

    def frame(p):
        z = render_depth(scene.geometry, p, k)
        if not np.all(np.isfinite(z)):
            raise InvalidArgument("some pixels see no surface")
        return render_rgb(scene, p, seed), DepthMap(z, intrinsics=k)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            frames = list(ex.map(frame, poses))
    else:
        frames = [frame(p) for p in poses]
    ts = np.arange(len(poses)) / scene.fps
    traj = Trajectory.from_poses(poses, timestamps=ts)
    return SyntheticSequence([f[0] for f in frames], [f[1] for f in frames], traj, k)


# ---------------------------------------------------------------------------
# oracle estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseNoise:
    rot_sigma_deg: float = 0.0
    dir_sigma_deg: float = 0.0


@dataclass(frozen=True)
class DepthNoise:
    mult_sigma: float = 0.0
    dropout_frac: float = 0.0


def _tangent_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.eye(3)[int(np.argmin(np.abs(d)))]
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def oracle_pose(gt: Trajectory, i: int, noise: PoseNoise = PoseNoise(), seed: int = 0) -> Pose:
    """Motion from frame ``i`` to ``i+1`` with rotation and direction noise and unit-norm translation.

    Rotation noise is an isotropic rotation vector with per-axis standard
    deviation ``rot_sigma_deg``; the direction is tilted by a tangent-plane
    rotation with per-axis deviation ``dir_sigma_deg``. The result is always
    flagged unscaled.
    """
    if not 0 <= i < len(gt) - 1:
        raise OutOfBounds(f"frame pair ({i}, {i + 1}) outside a trajectory of {len(gt)} poses")
    rel = relative(gt.poses[i], gt.poses[i + 1])
    rng = np.random.default_rng([seed, i, 1])
    R = rel.rotation
    if noise.rot_sigma_deg > 0:
        R = R @ so3_exp(rng.normal(0.0, math.radians(noise.rot_sigma_deg), 3))
    t = rel.translation
    n = np.linalg.norm(t)
    if n == 0.0:
        return Pose(R, np.zeros(3), scaled=False)
    d = t / n
    if noise.dir_sigma_deg > 0:
        e1, e2 = _tangent_basis(d)
        a, b = rng.normal(0.0, math.radians(noise.dir_sigma_deg), 2)
        d = so3_exp(a * e1 + b * e2) @ d
        d /= np.linalg.norm(d)
    return Pose(R, d, scaled=False)


def oracle_depth(gt: DepthMap, noise: DepthNoise = DepthNoise(), seed: int = 0) -> DepthMap:
    """Multiplicative log-normal noise and random pixel dropout."""
    rng = np.random.default_rng([seed, 2])
    vals = gt.values
    valid = gt.valid
    if noise.mult_sigma > 0:
        vals = vals * np.exp(rng.normal(0.0, noise.mult_sigma, vals.shape))
    if noise.dropout_frac > 0:
        valid = valid & (rng.uniform(size=vals.shape) >= noise.dropout_frac)
    return DepthMap(vals, valid, gt.intrinsics)


# ---------------------------------------------------------------------------
# pose-graph harness
# ---------------------------------------------------------------------------


@dataclass
class NoisyChain:
    truth: list
    graph: PoseGraph


def odometry_chain(
    n: int = 50,
    seed: int = 0,
    rot_sigma: float = math.radians(0.5),
    trans_sigma: float = 2e-5,
    path: object | None = None,
) -> NoisyChain:
    """Ground-truth path, dead-reckoned initial guess from noisy odometry, and an exact loop edge.

    Each odometry measurement is the true relative motion right-perturbed by a
    Gaussian twist with per-axis deviations ``rot_sigma`` (radians) and
    ``trans_sigma`` (meters). Edge information uses the same sigmas. The loop
    closure ties the last node to node 0 with the true relative pose.
    """
    path = RandomWalkPath(n_frames=n) if path is None else path
    truth = path.poses(seed)
    if len(truth) != n:
        raise InvalidArgument("path length does not match n")
    rng = np.random.default_rng([seed, 3])
    info = odometry_information(rot_sigma, trans_sigma)
    g = PoseGraph()
    cur = truth[0]
    g.add_node(0, cur, fixed=True)
    for k in range(n - 1):
        xi = np.concatenate([rng.normal(0, rot_sigma, 3), rng.normal(0, trans_sigma, 3)])
        z = relative(truth[k], truth[k + 1]) @ se3_exp(xi)
        cur = cur @ z
        g.add_node(k + 1, cur)
        g.add_edge(k, k + 1, z, info)
    g.add_edge(0, n - 1, relative(truth[0], truth[n - 1]), info)
    return NoisyChain(truth, g)


GEOMETRIES = {"sphere": SphereInterior, "box": BoxInterior, "plane": Plane}
PATHS = {"arc": ArcPath, "helix": HelixPath, "walk": RandomWalkPath}


def make_scene(
    geometry: str = "sphere",
    path: str = "arc",
    n_frames: int = 120,
    width: int = 320,
    height: int = 240,
    focal: float = 260.0,
) -> SyntheticScene:
    """Scene from named parts; defaults give the 120-frame sphere benchmark."""
    if geometry not in GEOMETRIES:
        raise InvalidArgument(f"unknown geometry {geometry!r}; choose from {', '.join(GEOMETRIES)}")
    if path not in PATHS:
        raise InvalidArgument(f"unknown path {path!r}; choose from {', '.join(PATHS)}")
    if n_frames < 2:
        raise InvalidArgument("a sequence needs at least 2 frames")
    return SyntheticScene(
        geometry=GEOMETRIES[geometry](),
        path=PATHS[path](n_frames=n_frames),
        intrinsics=CameraIntrinsics.default(width, height, focal),
    )
