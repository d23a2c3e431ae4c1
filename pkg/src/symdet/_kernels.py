"""Compiled inner loops for the volume builders.

All kernels take the 4x4 correspondence matrix ``A = K M K^-1`` and write
into caller-provided buffers. They release the GIL so candidate planes can
be evaluated from a thread pool.
"""
import numba
import numpy as np


@numba.njit(inline="always")
def _locate(A, x, y, d, h, w, exclude_self):
    # returns (u, v, ok)
    r0 = A[0, 0] * x + A[0, 1] * y + A[0, 2]
    r1 = A[1, 0] * x + A[1, 1] * y + A[1, 2]
    r2 = A[2, 0] * x + A[2, 1] * y + A[2, 2]
    d2 = d * r2 + A[2, 3]
    if not d2 > 0:
        return 0.0, 0.0, False
    u = (d * r0 + A[0, 3]) / d2
    v = (d * r1 + A[1, 3]) / d2
    if not (u >= 0 and u <= w - 1 and v >= 0 and v <= h - 1):
        return 0.0, 0.0, False
    if exclude_self and abs(u - x) < 1.0 and abs(v - y) < 1.0:
        return 0.0, 0.0, False
    return u, v, True


@numba.njit(nogil=True, cache=True)
def correlation_volume(corr, A, depths, exclude_self, values, valid):
    h, w = corr.shape[0], corr.shape[1]
    umax = max(w - 2, 0)
    vmax = max(h - 2, 0)
    for y in range(h):
        for x in range(w):
            img = corr[y, x]
            for i in range(depths.shape[0]):
                u, v, ok = _locate(A, x, y, depths[i], h, w, exclude_self)
                if not ok:
                    values[i, y, x] = 0.0
                    valid[i, y, x] = False
                    continue
                u0 = min(int(np.floor(u)), umax)
                v0 = min(int(np.floor(v)), vmax)
                u1 = min(u0 + 1, w - 1)
                v1 = min(v0 + 1, h - 1)
                wu = u - u0
                wv = v - v0
                top = (1.0 - wu) * img[v0, u0] + wu * img[v0, u1]
                bottom = (1.0 - wu) * img[v1, u0] + wu * img[v1, u1]
                values[i, y, x] = (1.0 - wv) * top + wv * bottom
                valid[i, y, x] = True


@numba.njit(nogil=True, cache=True)
def feature_volume(feats, A, depths, exclude_self, out, valid):
    """Fill ``out`` (2C, D, H, W) from channel-major features ``feats`` (C, H, W)."""
    c, h, w = feats.shape
    nd = depths.shape[0]
    umax = max(w - 2, 0)
    vmax = max(h - 2, 0)
    u0s = np.empty((nd, h, w), np.int64)
    v0s = np.empty((nd, h, w), np.int64)
    wus = np.empty((nd, h, w), np.float64)
    wvs = np.empty((nd, h, w), np.float64)
    for i in range(nd):
        for y in range(h):
            for x in range(w):
                u, v, ok = _locate(A, x, y, depths[i], h, w, exclude_self)
                valid[i, y, x] = ok
                if ok:
                    u0s[i, y, x] = min(int(np.floor(u)), umax)
                    v0s[i, y, x] = min(int(np.floor(v)), vmax)
                    wus[i, y, x] = u - u0s[i, y, x]
                    wvs[i, y, x] = v - v0s[i, y, x]
    for k in range(c):
        plane = feats[k]
        own = out[k]
        mir = out[c + k]
        for i in range(nd):
            for y in range(h):
                for x in range(w):
                    own[i, y, x] = plane[y, x]
                    if not valid[i, y, x]:
                        mir[i, y, x] = 0.0
                        continue
                    u0 = u0s[i, y, x]
                    v0 = v0s[i, y, x]
                    u1 = min(u0 + 1, w - 1)
                    v1 = min(v0 + 1, h - 1)
                    wu = wus[i, y, x]
                    wv = wvs[i, y, x]
                    top = (1.0 - wu) * plane[v0, u0] + wu * plane[v0, u1]
                    bottom = (1.0 - wu) * plane[v1, u0] + wu * plane[v1, u1]
                    mir[i, y, x] = (1.0 - wv) * top + wv * bottom


@numba.njit(nogil=True, cache=True)
def split_dot(vol, valid, out):
    """``out[d, y, x] = <vol[:C, d, y, x], vol[C:, d, y, x]>``, zero where invalid."""
    c = vol.shape[0] // 2
    out[:] = 0.0
    for k in range(c):
        a = vol[k]
        b = vol[c + k]
        for i in range(out.shape[0]):
            for y in range(out.shape[1]):
                for x in range(out.shape[2]):
                    out[i, y, x] += a[i, y, x] * b[i, y, x]
    for i in range(out.shape[0]):
        for y in range(out.shape[1]):
            for x in range(out.shape[2]):
                if not valid[i, y, x]:
                    out[i, y, x] = 0.0
