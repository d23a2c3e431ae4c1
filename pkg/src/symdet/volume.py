"""Per-plane correlation volumes, their scalar reducers, and the 4D feature-volume baseline.

For a candidate plane every pixel ``(x, y)`` is swept over ``D`` depths;
at each depth its mirror partner ``(u'', v'')`` is looked up in the
correlation tensor. The compact volume stores that single similarity per
cell. The baseline instead gathers the partner's full feature vector next
to the pixel's own, ``2C`` values per cell.

A cell is invalid when the reflected point is behind the camera, falls
outside the image, or (by default) lands within one pixel of the source
pixel. Points on the mirror plane are their own reflection, so such
self-matches score ~1 for every plane and carry no symmetry evidence.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .geometry import MirrorPlane, correspondence_matrix

D_MIN = 0.64
D_MAX = 1.23
DEPTH_SAMPLES = 64

REDUCERS = ("max-depth", "mean")


@dataclass(frozen=True)
class DepthSweep:
    d_min: float = D_MIN
    d_max: float = D_MAX
    count: int = DEPTH_SAMPLES

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise InvalidInputError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if int(self.count) != self.count or self.count < 2:
            raise InvalidInputError(f"depth sample count must be an integer >= 2, got {self.count}")

    @property
    def depths(self):
        i = np.arange(self.count, dtype=np.float64)
        d = self.d_min + i * (self.d_max - self.d_min) / (self.count - 1)
        d[-1] = self.d_max
        return d


@dataclass
class CorrelationVolume:
    values: np.ndarray      # (D, H, W) float32, zero where invalid
    valid: np.ndarray       # (D, H, W) bool
    plane: MirrorPlane

    @property
    def shape(self):
        return self.values.shape


@dataclass
class FeatureVolume4D:
    values: np.ndarray      # (2C, D, H, W) float32
    valid: np.ndarray       # (D, H, W) bool
    plane: MirrorPlane

    @property
    def channels(self):
        return self.values.shape[0] // 2


def _as_plane(plane):
    return plane if isinstance(plane, MirrorPlane) else MirrorPlane(plane)


def build_volume(corr, K, plane, sweep=DepthSweep(), exclude_self=True):
    """Compact ``(D, H, W)`` correlation volume of one candidate plane."""
    plane = _as_plane(plane)
    h, w = corr.shape[:2]
    if corr.shape != (h, w, h, w):
        raise InvalidInputError(f"correlation tensor must be (H, W, H, W), got {corr.shape}")
    values = np.empty((sweep.count, h, w), dtype=np.float32)
    valid = np.empty((sweep.count, h, w), dtype=np.bool_)
    _kernels.correlation_volume(
        np.ascontiguousarray(corr, dtype=np.float32), correspondence_matrix(K, plane),
        sweep.depths, exclude_self, values, valid)
    return CorrelationVolume(values, valid, plane)


def reduce_score(volume, reducer="max-depth"):
    """Scalar evidence for one plane; ``-inf`` when nothing is valid.

    ``max-depth`` takes each pixel's best valid depth and averages over the
    pixels that have at least one valid depth. ``mean`` averages all valid
    cells.
    """
    values, valid = volume.values, volume.valid
    if reducer == "max-depth":
        seen = valid.any(axis=0)
        if not seen.any():
            return -np.inf
        best = np.where(valid, values, -np.inf).max(axis=0)
        return float(np.mean(best[seen], dtype=np.float64))
    if reducer == "mean":
        if not valid.any():
            return -np.inf
        return float(np.mean(values[valid], dtype=np.float64))
    raise InvalidInputError(f"unknown reducer {reducer!r}; expected one of {REDUCERS}")


def build_feature_volume_4d(fm, K, plane, sweep=DepthSweep(), exclude_self=True):
    """Gather-and-concatenate volume: own feature in ``[0, C)``, mirrored in ``[C, 2C)``."""
    plane = _as_plane(plane)
    fm = np.asarray(fm, dtype=np.float32)
    h, w, c = fm.shape
    feats = np.ascontiguousarray(np.moveaxis(fm, -1, 0))
    out = np.empty((2 * c, sweep.count, h, w), dtype=np.float32)
    valid = np.empty((sweep.count, h, w), dtype=np.bool_)
    _kernels.feature_volume(feats, correspondence_matrix(K, plane), sweep.depths, exclude_self, out, valid)
    return FeatureVolume4D(out, valid, plane)


def feature_volume_dot(fv):
    """Reduce a 4D feature volume to the compact volume by per-cell dot products."""
    values = np.empty(fv.valid.shape, dtype=np.float32)
    _kernels.split_dot(fv.values, fv.valid, values)
    return CorrelationVolume(values, fv.valid, fv.plane)


def downscale3d(volume, conv):
    """Flat ``(D/4) * (H/8) * (W/8)`` descriptor of a correlation volume.

    The torch implementation lives with the learned scorer; importing it
    lazily keeps the reducer path free of the torch dependency.
    """
    from .scorer import downscale3d as _downscale3d
    return _downscale3d(volume, conv)
