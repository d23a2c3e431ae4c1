"""Mirror transforms, pinhole projection and depth-swept pixel correspondences.

Planes are ``n . x + 1 = 0`` with a unit normal ``n`` on the canonical
hemisphere ``n_z <= 0``. The offset is fixed to 1 because a single view
cannot separate scene scale from plane offset.

Points are handled as numpy arrays with the coordinate on the last axis, so
every function accepts a single point or an arbitrary batch:

* homogeneous 3D points ``[X, Y, Z, W]`` of shape ``(..., 4)``
* pixel/depth points ``[u, v, d]`` of shape ``(..., 3)``
"""
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidDepthError, InvalidInputError

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class MirrorPlane:
    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(-1)
        if n.shape != (3,) or not np.all(np.isfinite(n)):
            raise InvalidInputError(f"plane normal must be a finite 3-vector, got {self.normal!r}")
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise InvalidInputError(f"plane normal must be unit length, |n| = {np.linalg.norm(n)!r}")
        n = n.copy()
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)

    @classmethod
    def from_vector(cls, v):
        """Normalize ``v`` and flip it onto the canonical hemisphere."""
        v = np.asarray(v, dtype=np.float64)
        norm = np.linalg.norm(v)
        if not norm > 0:
            raise InvalidInputError("cannot build a plane from a zero vector")
        v = v / norm
        if v[2] > 0:
            v = -v
        return cls(v)

    @property
    def anchor(self):
        # -n is the point of the plane closest to the camera centre
        return -self.normal

    def __eq__(self, other):
        return isinstance(other, MirrorPlane) and np.array_equal(self.normal, other.normal)

    def __hash__(self):
        return hash(self.normal.tobytes())


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("intrinsics must be finite")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self):
        """4x4 lift of K so that ``K @ [X, Y, Z, 1] / Z == [u, v, 1, 1/Z]``."""
        return np.array([
            [self.fx, 0.0, self.cx, 0.0],
            [0.0, self.fy, self.cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])

    @property
    def inverse(self):
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0],
            [0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])

    def as_dict(self):
        return {"fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy)}


def default_intrinsics(height=64, width=64):
    # focal length equal to the image width: roughly a 53 degree field of view
    return CameraIntrinsics(fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0)


def mirror_matrix(plane):
    """Homogeneous reflection through ``n . x + 1 = 0``.

    ``M = [[I - 2 n n^T, -2 n], [0, 1]]``. ``M`` is an involution and its
    linear part has determinant -1.
    """
    if not isinstance(plane, MirrorPlane):
        plane = MirrorPlane(plane)
    n = plane.normal
    m = np.eye(4)
    m[:3, :3] -= 2.0 * np.outer(n, n)
    m[:3, 3] = -2.0 * n
    return m


def reflect_point(plane, p):
    p = np.asarray(p, dtype=np.float64)
    return p @ mirror_matrix(plane).T


def project(K, p):
    """Project homogeneous camera-space points to ``[u, v, d]``.

    Raises BehindCameraError if any point has ``Z <= 0``.
    """
    p = np.asarray(p, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("cannot project a point with Z <= 0")
    return np.stack([K.fx * x / z + K.cx, K.fy * y / z + K.cy, z], axis=-1)


def backproject(K, q):
    q = np.asarray(q, dtype=np.float64)
    u, v, d = q[..., 0], q[..., 1], q[..., 2]
    if np.any(d <= 0):
        raise InvalidDepthError("depth must be positive")
    return np.stack([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d, np.ones_like(d)], axis=-1)


def correspondence_matrix(K, plane):
    """``K M K^-1``: maps ``[u d, v d, d, 1]`` to ``[u'' d'', v'' d'', d'', 1]``."""
    return K.matrix @ mirror_matrix(plane) @ K.inverse


def pixel_correspondence(K, plane, q):
    """Mirror partner of pixel ``(u, v)`` seen at depth ``d``.

    Returns ``(q2, valid)`` where ``q2 = [u'', v'', d'']``. ``valid`` is False
    where the reflected point is at or behind the camera; the pixel
    coordinates of such entries are meaningless (NaN when ``d'' == 0``).
    """
    q = np.asarray(q, dtype=np.float64)
    u, v, d = q[..., 0], q[..., 1], q[..., 2]
    lifted = np.stack([u * d, v * d, d, np.ones_like(d)], axis=-1)
    y = lifted @ correspondence_matrix(K, plane).T
    d2 = y[..., 2]
    valid = d2 > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([y[..., 0] / d2, y[..., 1] / d2, d2], axis=-1)
    return out, valid


def pixel_correspondence_direct(K, plane, q):
    """Same as :func:`pixel_correspondence` via backproject, reflect, project."""
    X = backproject(K, q)
    X2 = reflect_point(plane, X)
    z = X2[..., 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([K.fx * X2[..., 0] / z + K.cx, K.fy * X2[..., 1] / z + K.cy, z], axis=-1)
    return out, valid
