"""Projective TSDF integration and zero-crossing extraction kernels.

Grid point ``(i, j, k)`` sits at ``origin + (i, j, k) * voxel_size``. Arrays are
indexed ``[i, j, k]`` in C order. Integration updates the volume in place.
"""

import math

import numpy as np

from .._accel import njit, pick, prange


@njit(parallel=True)
def integrate_numba(tsdf, weight, rgb, origin, voxel, R, t, fx, fy, cx, cy, depth, valid, color, trunc, w_max):
    nx, ny, nz = tsdf.shape
    h, w = depth.shape
    use_color = color.shape[0] == h and rgb.shape[0] == nx
    for i in prange(nx):
        px = origin[0] + i * voxel
        for j in range(ny):
            py = origin[1] + j * voxel
            for k in range(nz):
                pz = origin[2] + k * voxel
                zc = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
                if zc <= 0.0:
                    continue
                xc = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
                yc = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
                u = math.floor(fx * xc / zc + cx + 0.5)
                v = math.floor(fy * yc / zc + cy + 0.5)
                if u < 0 or v < 0 or u >= w or v >= h:
                    continue
                ui = int(u)
                vi = int(v)
                if not valid[vi, ui]:
                    continue
                sdf = depth[vi, ui] - zc
                val = min(max(sdf, -trunc), trunc) / trunc
                w_old = weight[i, j, k]
                w_new = w_old + 1.0
                tsdf[i, j, k] = (w_old * tsdf[i, j, k] + val) / w_new
                if use_color:
                    for c in range(3):
                        rgb[i, j, k, c] = (w_old * rgb[i, j, k, c] + color[vi, ui, c]) / w_new
                weight[i, j, k] = min(w_new, w_max)


def integrate_numpy(tsdf, weight, rgb, origin, voxel, R, t, fx, fy, cx, cy, depth, valid, color, trunc, w_max):
    nx, ny, nz = tsdf.shape
    h, w = depth.shape
    use_color = color.shape[0] == h and rgb.shape[0] == nx
    jj, kk = np.meshgrid(np.arange(ny), np.arange(nz), indexing="ij")
    py = origin[1] + jj * voxel
    pz = origin[2] + kk * voxel
    for i in range(nx):
        px = origin[0] + i * voxel
        zc = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        xc = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        yc = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        front = zc > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.floor(fx * xc / zc + cx + 0.5)
            v = np.floor(fy * yc / zc + cy + 0.5)
        ok = front & (u >= 0) & (v >= 0) & (u < w) & (v < h)
        ui = np.where(ok, u, 0).astype(np.int64)
        vi = np.where(ok, v, 0).astype(np.int64)
        ok &= valid[vi, ui]
        if not ok.any():
            continue
        val = np.clip(depth[vi[ok], ui[ok]] - zc[ok], -trunc, trunc) / trunc
        sl = tsdf[i]
        wl = weight[i]
        w_old = wl[ok]
        w_new = w_old + 1.0
        sl[ok] = (w_old * sl[ok] + val) / w_new
        if use_color:
            cl = rgb[i]
            cl[ok] = (w_old[:, None] * cl[ok] + color[vi[ok], ui[ok]]) / w_new[:, None]
        wl[ok] = np.minimum(w_new, w_max)


@njit
def _extract_pass(tsdf, weight, rgb, origin, voxel, min_weight, pts, cols, write):
    nx, ny, nz = tsdf.shape
    use_color = write and cols.shape[0] > 0
    n = 0
    for axis in range(3):
        di = 1 if axis == 0 else 0
        dj = 1 if axis == 1 else 0
        dk = 1 if axis == 2 else 0
        for i in range(nx - di):
            for j in range(ny - dj):
                for k in range(nz - dk):
                    wa = weight[i, j, k]
                    wb = weight[i + di, j + dj, k + dk]
                    if wa <= 0.0 or wb <= 0.0 or wa < min_weight or wb < min_weight:
                        continue
                    a = tsdf[i, j, k]
                    b = tsdf[i + di, j + dj, k + dk]
                    if (a < 0.0) == (b < 0.0):
                        continue
                    if write:
                        s = a / (a - b)
                        pts[n, 0] = origin[0] + (i + s * di) * voxel
                        pts[n, 1] = origin[1] + (j + s * dj) * voxel
                        pts[n, 2] = origin[2] + (k + s * dk) * voxel
                        if use_color:
                            for c in range(3):
                                cols[n, c] = (1.0 - s) * rgb[i, j, k, c] + s * rgb[i + di, j + dj, k + dk, c]
                    n += 1
    return n


@njit
def extract_numba(tsdf, weight, rgb, origin, voxel, min_weight):
    empty = np.empty((0, 3))
    n = _extract_pass(tsdf, weight, rgb, origin, voxel, min_weight, empty, empty, False)
    pts = np.empty((n, 3))
    cols = np.empty((n if rgb.shape[0] == tsdf.shape[0] else 0, 3))
    _extract_pass(tsdf, weight, rgb, origin, voxel, min_weight, pts, cols, True)
    return pts, cols


def extract_numpy(tsdf, weight, rgb, origin, voxel, min_weight):
    nx = tsdf.shape[0]
    use_color = rgb.shape[0] == nx
    pts, cols = [], []
    for axis in range(3):
        n = tsdf.shape[axis]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, n - 1)
        hi[axis] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        a, b = tsdf[lo], tsdf[hi]
        wa, wb = weight[lo], weight[hi]
        m = (wa > 0) & (wb > 0) & (wa >= min_weight) & (wb >= min_weight) & ((a < 0) != (b < 0))
        idx = np.argwhere(m)
        s = a[m] / (a[m] - b[m])
        p = idx.astype(np.float64)
        p[:, axis] += s
        pts.append(origin + p * voxel)
        if use_color:
            cols.append((1.0 - s)[:, None] * rgb[lo][m] + s[:, None] * rgb[hi][m])
    P = np.concatenate(pts) if pts else np.empty((0, 3))
    C = np.concatenate(cols) if use_color else np.empty((0, 3))
    return P, C


integrate = pick(integrate_numba, integrate_numpy)
extract = pick(extract_numba, extract_numpy)
