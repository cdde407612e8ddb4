"""Solid lattice noise for the synthetic renderer.

A splitmix-style 64-bit hash of the integer lattice corner and a seed, mapped
to [0, 1), interpolated trilinearly with smoothstep weights.
"""

import math

import numpy as np

from .._accel import njit, pick, prange

_K1 = np.uint64(0x9E3779B97F4A7C15)
_K2 = np.uint64(0xC2B2AE3D27D4EB4F)
_K3 = np.uint64(0x165667B19E3779F9)
_K4 = np.uint64(0x27D4EB2F165667C5)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S27, _S31, _S33, _S11 = np.uint64(27), np.uint64(31), np.uint64(33), np.uint64(11)
_SCALE = float(1 << 53)


def hash3_numpy(ix, iy, iz, seed):
    with np.errstate(over="ignore"):
        h = (
            ix.astype(np.uint64) * _K1
            ^ iy.astype(np.uint64) * _K2
            ^ iz.astype(np.uint64) * _K3
            ^ np.uint64(seed & 0xFFFFFFFF) * _K4
        )
        h ^= h >> _S31
        h *= _M1
        h ^= h >> _S27
        h *= _M2
        h ^= h >> _S33
    return (h >> _S11).astype(np.float64) / _SCALE


def value_noise_numpy(p, cell, seed):
    q = p / cell
    i = np.floor(q)
    f = q - i
    f = f * f * (3.0 - 2.0 * f)
    i = i.astype(np.int64)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                out += wx * wy * wz * hash3_numpy(i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz, seed)
    return out


@njit
def _hash1(ix, iy, iz, s):
    h = np.uint64(ix) * _K1 ^ np.uint64(iy) * _K2 ^ np.uint64(iz) * _K3 ^ s * _K4
    h ^= h >> _S31
    h *= _M1
    h ^= h >> _S27
    h *= _M2
    h ^= h >> _S33
    return float(h >> _S11) / _SCALE


@njit(parallel=True)
def _noise_flat(pts, cell, s, out):
    for n in prange(pts.shape[0]):
        ii = np.empty(3, np.int64)
        ff = np.empty(3)
        for a in range(3):
            q = pts[n, a] / cell
            fl = math.floor(q)
            t = q - fl
            ff[a] = t * t * (3.0 - 2.0 * t)
            ii[a] = np.int64(fl)
        acc = 0.0
        for dx in range(2):
            wx = ff[0] if dx else 1.0 - ff[0]
            for dy in range(2):
                wy = ff[1] if dy else 1.0 - ff[1]
                for dz in range(2):
                    wz = ff[2] if dz else 1.0 - ff[2]
                    acc += wx * wy * wz * _hash1(ii[0] + dx, ii[1] + dy, ii[2] + dz, s)
        out[n] = acc


def value_noise_numba(p, cell, seed):
    flat = np.ascontiguousarray(p, dtype=np.float64).reshape(-1, 3)
    out = np.empty(flat.shape[0])
    _noise_flat(flat, float(cell), np.uint64(seed & 0xFFFFFFFF), out)
    return out.reshape(p.shape[:-1])


value_noise = pick(value_noise_numba, value_noise_numpy)
