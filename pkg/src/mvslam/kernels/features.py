"""Corner response, segment test, steered BRIEF and Hamming distance kernels.

Every ``*_numba`` function has a ``*_numpy`` twin with the same output; the
public names at the bottom pick one according to :mod:`mvslam._accel`.
"""

import math

import numpy as np
from scipy import ndimage

from .._accel import njit, pick, prange

# ---------------------------------------------------------------------------
# separable filtering (clamped borders, matches ndimage mode="nearest")
# ---------------------------------------------------------------------------

DERIV = np.array([-0.5, 0.0, 0.5])
SMOOTH = np.array([0.25, 0.5, 0.25])


def gaussian_taps(sigma: float) -> np.ndarray:
    r = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


@njit
def _correlate_rows(img, taps):
    h, w = img.shape
    r = taps.shape[0] // 2
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for k in range(taps.shape[0]):
                xx = min(max(x + k - r, 0), w - 1)
                acc += taps[k] * img[y, xx]
            out[y, x] = acc
    return out


@njit
def _correlate_cols(img, taps):
    h, w = img.shape
    r = taps.shape[0] // 2
    out = np.empty((h, w))
    for y in range(h):
        for k in range(taps.shape[0]):
            yy = min(max(y + k - r, 0), h - 1)
            t = taps[k]
            for x in range(w):
                if k == 0:
                    out[y, x] = t * img[yy, x]
                else:
                    out[y, x] += t * img[yy, x]
    return out


@njit
def harris_response_numba(img, window, k):
    gx = _correlate_cols(_correlate_rows(img, DERIV), SMOOTH)
    gy = _correlate_rows(_correlate_cols(img, DERIV), SMOOTH)
    h, w = img.shape
    xx = np.empty((h, w))
    yy = np.empty((h, w))
    xy = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            a = gx[y, x]
            b = gy[y, x]
            xx[y, x] = a * a
            yy[y, x] = b * b
            xy[y, x] = a * b
    sxx = _correlate_cols(_correlate_rows(xx, window), window)
    syy = _correlate_cols(_correlate_rows(yy, window), window)
    sxy = _correlate_cols(_correlate_rows(xy, window), window)
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            det = sxx[y, x] * syy[y, x] - sxy[y, x] * sxy[y, x]
            tr = sxx[y, x] + syy[y, x]
            out[y, x] = det - k * tr * tr
    return out


def harris_response_numpy(img, window, k):
    def sep(a, tx, ty):
        a = ndimage.correlate1d(a, tx, axis=1, mode="nearest")
        return ndimage.correlate1d(a, ty, axis=0, mode="nearest")

    gx = sep(img, DERIV, SMOOTH)
    gy = sep(img, SMOOTH, DERIV)
    sxx = sep(gx * gx, window, window)
    syy = sep(gy * gy, window, window)
    sxy = sep(gx * gy, window, window)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


# ---------------------------------------------------------------------------
# non-maximum suppression with raster-order tie breaking
# ---------------------------------------------------------------------------


@njit
def nms_numba(resp, thresh, border):
    h, w = resp.shape
    keep = np.zeros((h, w), dtype=np.bool_)
    for y in range(border, h - border):
        for x in range(border, w - border):
            r = resp[y, x]
            if not r > thresh:
                continue
            ok = True
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    if dy == 0 and dx == 0:
                        continue
                    n = resp[y + dy, x + dx]
                    earlier = dy < 0 or (dy == 0 and dx < 0)
                    if n > r or (earlier and n == r):
                        ok = False
            keep[y, x] = ok
    return keep


def nms_numpy(resp, thresh, border):
    h, w = resp.shape
    keep = np.zeros((h, w), dtype=bool)
    c = resp[border : h - border, border : w - border]
    ok = c > thresh
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            n = resp[border + dy : h - border + dy, border + dx : w - border + dx]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            ok &= ~(n > c)
            if earlier:
                ok &= ~(n == c)
    keep[border : h - border, border : w - border] = ok
    return keep


# ---------------------------------------------------------------------------
# FAST 9-of-16 segment test
# ---------------------------------------------------------------------------

CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)  # fmt: skip
ARC = 9


@njit
def fast_score_numba(img, threshold):
    """Segment-test score, 0 where the pixel is not a corner."""
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(3, h - 3):
        for x in range(3, w - 3):
            p = img[y, x]
            run_b = 0
            run_d = 0
            best_b = 0
            best_d = 0
            sum_b = 0.0
            sum_d = 0.0
            for i in range(16 + ARC - 1):
                j = i % 16
                v = img[y + CIRCLE[j, 1], x + CIRCLE[j, 0]]
                if v > p + threshold:
                    run_b += 1
                    run_d = 0
                    if i < 16:
                        sum_b += v - p - threshold
                elif v < p - threshold:
                    run_d += 1
                    run_b = 0
                    if i < 16:
                        sum_d += p - v - threshold
                else:
                    run_b = 0
                    run_d = 0
                best_b = max(best_b, run_b)
                best_d = max(best_d, run_d)
            s = 0.0
            if best_b >= ARC:
                s = sum_b
            if best_d >= ARC:
                s = max(s, sum_d)
            out[y, x] = s
    return out


def fast_score_numpy(img, threshold):
    h, w = img.shape
    out = np.zeros((h, w))
    if h < 7 or w < 7:
        return out
    p = img[3 : h - 3, 3 : w - 3]
    ring = np.stack([img[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx] for dx, dy in CIRCLE], axis=-1)
    bright = ring > (p + threshold)[..., None]
    dark = ring < (p - threshold)[..., None]

    def longest(mask):
        ext = np.concatenate([mask, mask[..., : ARC - 1]], axis=-1)
        run = np.zeros(mask.shape[:-1], dtype=np.int64)
        best = np.zeros_like(run)
        for i in range(ext.shape[-1]):
            run = (run + 1) * ext[..., i]
            np.maximum(best, run, out=best)
        return best

    sum_b = np.where(bright, ring - (p + threshold)[..., None], 0.0).sum(-1)
    sum_d = np.where(dark, (p - threshold)[..., None] - ring, 0.0).sum(-1)
    s = np.where(longest(bright) >= ARC, sum_b, 0.0)
    s = np.maximum(s, np.where(longest(dark) >= ARC, sum_d, 0.0))
    out[3 : h - 3, 3 : w - 3] = s
    return out


# ---------------------------------------------------------------------------
# steered BRIEF
# ---------------------------------------------------------------------------

PATCH_RADIUS = 15
PATTERN_RADIUS = 13
N_BITS = 256


def _make_pattern() -> np.ndarray:
    rng = np.random.default_rng(0xB81EF)
    pts = []
    while len(pts) < N_BITS:
        c = rng.normal(0.0, 31.0 / 5.0, size=4)
        if np.hypot(c[0], c[1]) <= PATTERN_RADIUS and np.hypot(c[2], c[3]) <= PATTERN_RADIUS:
            pts.append(c)
    return np.array(pts)


PATTERN = _make_pattern()  # (256, 4): x1, y1, x2, y2
_dy, _dx = np.mgrid[-PATCH_RADIUS : PATCH_RADIUS + 1, -PATCH_RADIUS : PATCH_RADIUS + 1]
_disc = _dx**2 + _dy**2 <= PATCH_RADIUS**2
DISC = np.stack([_dx[_disc], _dy[_disc]], axis=1).astype(np.int64)


@njit
def orientation_numba(img, xs, ys):
    n = xs.shape[0]
    out = np.empty(n)
    for i in range(n):
        m10 = 0.0
        m01 = 0.0
        for k in range(DISC.shape[0]):
            v = img[ys[i] + DISC[k, 1], xs[i] + DISC[k, 0]]
            m10 += DISC[k, 0] * v
            m01 += DISC[k, 1] * v
        out[i] = math.atan2(m01, m10)
    return out


def orientation_numpy(img, xs, ys):
    v = img[ys[:, None] + DISC[None, :, 1], xs[:, None] + DISC[None, :, 0]]
    return np.arctan2(v @ DISC[:, 1].astype(np.float64), v @ DISC[:, 0].astype(np.float64))


@njit
def brief_numba(img, xs, ys, angles):
    n = xs.shape[0]
    out = np.zeros((n, N_BITS // 8), dtype=np.uint8)
    for i in range(n):
        c = math.cos(angles[i])
        s = math.sin(angles[i])
        for b in range(N_BITS):
            x1 = int(np.rint(c * PATTERN[b, 0] - s * PATTERN[b, 1]))
            y1 = int(np.rint(s * PATTERN[b, 0] + c * PATTERN[b, 1]))
            x2 = int(np.rint(c * PATTERN[b, 2] - s * PATTERN[b, 3]))
            y2 = int(np.rint(s * PATTERN[b, 2] + c * PATTERN[b, 3]))
            if img[ys[i] + y1, xs[i] + x1] < img[ys[i] + y2, xs[i] + x2]:
                out[i, b >> 3] |= np.uint8(1 << (7 - (b & 7)))
    return out


def brief_numpy(img, xs, ys, angles):
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    P = PATTERN
    x1 = np.rint(c * P[:, 0] - s * P[:, 1]).astype(np.int64)
    y1 = np.rint(s * P[:, 0] + c * P[:, 1]).astype(np.int64)
    x2 = np.rint(c * P[:, 2] - s * P[:, 3]).astype(np.int64)
    y2 = np.rint(s * P[:, 2] + c * P[:, 3]).astype(np.int64)
    bits = img[ys[:, None] + y1, xs[:, None] + x1] < img[ys[:, None] + y2, xs[:, None] + x2]
    return np.packbits(bits, axis=1)


# ---------------------------------------------------------------------------
# Hamming distances
# ---------------------------------------------------------------------------

POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


@njit(parallel=True)
def hamming_numba(a, b):
    na, nb = a.shape[0], b.shape[0]
    out = np.empty((na, nb), dtype=np.int64)
    for i in prange(na):
        for j in range(nb):
            d = 0
            for k in range(a.shape[1]):
                d += POPCOUNT[a[i, k] ^ b[j, k]]
            out[i, j] = d
    return out


def hamming_numpy(a, b):
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.int64)
    return POPCOUNT[a[:, None, :] ^ b[None, :, :]].sum(axis=-1)


harris_response = pick(harris_response_numba, harris_response_numpy)
nms = pick(nms_numba, nms_numpy)
fast_score = pick(fast_score_numba, fast_score_numpy)
orientation = pick(orientation_numba, orientation_numpy)
brief = pick(brief_numba, brief_numpy)
hamming = pick(hamming_numba, hamming_numpy)
