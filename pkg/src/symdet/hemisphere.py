"""Candidate plane normals on the hemisphere and the graph over them."""
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraphError, InvalidInputError

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
POLE = np.array([0.0, 0.0, -1.0])


@dataclass
class SphericalLattice:
    normals: np.ndarray                 # (K, 3), unit, canonical n_z <= 0
    stage_index: int = 0
    knn: np.ndarray | None = field(default=None, repr=False)   # (K, k) neighbour indices

    def __len__(self):
        return len(self.normals)

    def with_graph(self, k=16):
        self.knn = knn_graph(self, k)
        return self


def _spiral(count, z_top):
    # z runs from the pole down to z_top; golden-angle azimuths
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (i + 0.5) * (1.0 - z_top) / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    theta = i * GOLDEN_ANGLE
    # measured around POLE = (0, 0, -1)
    return np.stack([r * np.cos(theta), r * np.sin(theta), -z], axis=1)


def fibonacci_hemisphere(count, stage_index=0):
    if int(count) != count or count < 1:
        raise InvalidInputError(f"count must be a positive integer, got {count!r}")
    return SphericalLattice(_spiral(int(count), 0.0), stage_index)


def _rotation_from_pole(center):
    """Rodrigues rotation taking POLE onto ``center``."""
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    axis = np.cross(POLE, c)
    s = np.linalg.norm(axis)
    cos = float(np.dot(POLE, c))
    if s < 1e-15:
        if cos > 0:
            return np.eye(3)
        # antipodal: half turn about x
        return np.diag([1.0, -1.0, -1.0])
    k = axis / s
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + s * kx + (1.0 - cos) * (kx @ kx)


def cap_lattice(center, delta, count, stage_index=0):
    """Fibonacci spiral over the cap of half-angle ``delta`` degrees around ``center``.

    The spiral is laid out around (0, 0, -1) and rotated onto ``center``.
    Normals leaving the canonical hemisphere are negated, which describes
    the same plane.
    """
    if not (0 < delta <= 90):
        raise InvalidInputError(f"cap half-angle must be in (0, 90], got {delta!r}")
    if int(count) != count or count < 1:
        raise InvalidInputError(f"count must be a positive integer, got {count!r}")
    pts = _spiral(int(count), np.cos(np.deg2rad(delta)))
    R = _rotation_from_pole(center)
    if not np.array_equal(R, np.eye(3)):
        pts = pts @ R.T
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts[pts[:, 2] > 0] *= -1.0
    return SphericalLattice(pts, stage_index)


def angle_between(a, b):
    """Unsigned angle between plane normals in degrees, in [0, 90].

    Broadcasts over leading axes.
    """
    dot = np.abs(np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64), axis=-1))
    return np.degrees(np.arccos(np.clip(dot, 0.0, 1.0)))


def pairwise_angles(normals):
    normals = np.asarray(normals, dtype=np.float64)
    dot = np.abs(normals @ normals.T)
    return np.degrees(np.arccos(np.clip(dot, 0.0, 1.0)))


def knn_graph(lattice, k):
    """Directed k-nearest-neighbour graph, ties broken by lower index.

    Returns an int array of shape (K, min(k, K - 1)).
    """
    normals = lattice.normals if isinstance(lattice, SphericalLattice) else np.asarray(lattice)
    n = len(normals)
    if n < 2:
        raise EmptyGraphError("a k-NN graph needs at least two nodes")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k!r}")
    k = min(int(k), n - 1)
    ang = pairwise_angles(normals)
    np.fill_diagonal(ang, np.inf)
    order = np.argsort(ang, axis=1, kind="stable")
    return order[:, :k]
