"""Time the numba and numpy backends of every hot kernel on realistic inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 320x240] [--grid 96]

The first numba call compiles (or loads the on-disk cache) and is excluded.
Prints the best wall time per backend and the speedup.
"""

import argparse
import time

import numpy as np

from mvslam._accel import HAS_NUMBA
from mvslam.camera import CameraIntrinsics, DepthMap
from mvslam.geometry import Pose
from mvslam.kernels import features as FK
from mvslam.kernels import texture as TK
from mvslam.kernels import tsdf as VK
from mvslam.synth import SphereInterior, render_depth


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(w, h, grid, rng):
    img = rng.uniform(0, 255, (h, w))
    taps = FK.gaussian_taps(1.5)
    resp = FK.harris_response_numpy(img, taps, 0.04)
    xs = rng.integers(16, w - 16, 500)
    ys = rng.integers(16, h - 16, 500)
    ang = rng.uniform(-np.pi, np.pi, 500)
    da = FK.brief_numpy(img, xs, ys, ang)
    noise_pts = rng.uniform(-0.06, 0.06, (h, w, 4, 3))

    k = CameraIntrinsics.default(w, h, 0.8 * w)
    depth = DepthMap(render_depth(SphereInterior(), Pose(), k), intrinsics=k)
    voxel = 0.13 / grid
    origin = np.full(3, -0.065)
    R, t = np.eye(3), np.zeros(3)
    color = rng.uniform(0, 255, (h, w, 3))

    def fresh():
        return np.ones((grid,) * 3), np.zeros((grid,) * 3), np.zeros((grid,) * 3 + (3,))

    def integrate(impl):
        tsdf, weight, rgb = fresh()
        impl(tsdf, weight, rgb, origin, voxel, R, t, k.fx, k.fy, k.cx, k.cy, depth.values, depth.valid, color, 4 * voxel, 64.0)

    tsdf, weight, rgb = fresh()
    VK.integrate_numpy(tsdf, weight, rgb, origin, voxel, R, t, k.fx, k.fy, k.cx, k.cy, depth.values, depth.valid, color, 4 * voxel, 64.0)

    yield "harris", lambda f: f(img, taps, 0.04), FK.harris_response_numba, FK.harris_response_numpy
    yield "nms", lambda f: f(resp, 1.0, 16), FK.nms_numba, FK.nms_numpy
    yield "fast", lambda f: f(img, 20.0), FK.fast_score_numba, FK.fast_score_numpy
    yield "brief", lambda f: f(img, xs, ys, ang), FK.brief_numba, FK.brief_numpy
    yield "hamming", lambda f: f(da, da), FK.hamming_numba, FK.hamming_numpy
    yield "value_noise", lambda f: f(noise_pts, 0.0015, 0), TK.value_noise_numba, TK.value_noise_numpy
    yield f"tsdf_integrate {grid}^3", integrate, VK.integrate_numba, VK.integrate_numpy
    yield f"tsdf_extract {grid}^3", lambda f: f(tsdf, weight, rgb, origin, voxel, 1.0), VK.extract_numba, VK.extract_numpy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", default="320x240", help="image WxH")
    ap.add_argument("--grid", type=int, default=96, help="TSDF grid side")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w, h = (int(v) for v in args.size.lower().split("x"))
    if not HAS_NUMBA:
        print("numba is not importable; only the numpy column is meaningful")

    print(f"{'kernel':<22}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, call, fast, slow in cases(w, h, args.grid, np.random.default_rng(args.seed)):
        call(fast)  # compile or load from cache
        tf = best_of(lambda: call(fast), args.repeat)
        ts = best_of(lambda: call(slow), args.repeat)
        print(f"{name:<22}{1e3 * tf:>12.2f}{1e3 * ts:>12.2f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
