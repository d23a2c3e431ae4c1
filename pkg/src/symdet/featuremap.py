"""Feature normalization, the all-pairs correlation tensor and bilinear lookups into it.

A feature map is an ``(H, W, C)`` array. The correlation tensor is an
``(H, W, H, W)`` array with ``corr[y, x, v, u] = <F[y, x], F[v, u]>``.
"""
import numpy as np

NORM_EPS = 1e-12


def normalize(fm):
    """L2-normalize every pixel's channel vector; near-zero vectors become zero."""
    fm = np.asarray(fm)
    dtype = fm.dtype if np.issubdtype(fm.dtype, np.floating) else np.float64
    norms = np.linalg.norm(fm.astype(np.float64), axis=-1, keepdims=True)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms >= NORM_EPS)
    return (fm * scale).astype(dtype)


def build_correlation(fm, dtype=np.float32):
    """All-pairs channel dot products of a (normalized) feature map.

    The result is exactly symmetric: ``(c + c.T) / 2`` is bitwise symmetric
    because float addition commutes.
    """
    fm = np.asarray(fm)
    h, w, c = fm.shape
    flat = np.ascontiguousarray(fm.reshape(h * w, c), dtype=dtype)
    corr = flat @ flat.T
    corr += corr.T.copy()
    corr *= 0.5
    return corr.reshape(h, w, h, w)


def bilinear_weights(u, v, height, width):
    """Corner indices and weights for bilinear lookups on an ``height x width`` grid.

    Returns ``(v0, v1, u0, u1, wu, wv, valid)``. Points outside
    ``[0, W-1] x [0, H-1]`` are invalid; their indices are clamped to the
    grid so they can still be gathered safely and must be masked by the
    caller.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    valid = (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    u0 = np.clip(np.floor(uc), 0, max(width - 2, 0)).astype(np.intp)
    v0 = np.clip(np.floor(vc), 0, max(height - 2, 0)).astype(np.intp)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    wu = uc - u0
    wv = vc - v0
    return v0, v1, u0, u1, wu, wv, valid


def sample_bilinear(corr, x, y, u, v):
    """Value of ``corr[y, x]`` at continuous target pixel ``(u, v)``.

    Returns ``(value, valid)``; out-of-grid targets give ``(0.0, False)``.
    """
    h, w = corr.shape[2:]
    v0, v1, u0, u1, wu, wv, valid = bilinear_weights(u, v, h, w)
    if not valid:
        return 0.0, False
    plane = corr[y, x]
    top = (1 - wu) * plane[v0, u0] + wu * plane[v0, u1]
    bottom = (1 - wu) * plane[v1, u0] + wu * plane[v1, u1]
    return float((1 - wv) * top + wv * bottom), True
