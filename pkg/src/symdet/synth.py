"""Synthetic scenes with exactly known mirror symmetry.

A ground-truth plane is drawn uniformly on the canonical hemisphere. Random
3D points in the depth range are reflected through it; every pair whose
two members are both visible gets one random unit descriptor, splatted to
the nearest pixel of each member. Remaining pixels hold independent random
descriptors, so at the true plane and depth a pair pixel correlates exactly
1 with its partner while unrelated pixels correlate ~0.

Scenes are stored as a JSON header next to a raw float32 blob, see
:func:`write_scene`.
"""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationFailedError, InvalidInputError, SceneFormatError
from .geometry import CameraIntrinsics, MirrorPlane, backproject, default_intrinsics, project, reflect_point
from .volume import D_MAX, D_MIN

SCENE_VERSION = 1

DEFAULT_PAIRS = 800
DEFAULT_DISTRACTORS = 100
FRUSTUM_SAMPLES = 4096


@dataclass
class Scene:
    features: np.ndarray                 # (H, W, C) float32
    intrinsics: CameraIntrinsics
    gt_plane: MirrorPlane | None = None
    # synthetic bookkeeping; absent for scenes read from disk
    points: np.ndarray | None = field(default=None, repr=False)           # (P, 3)
    descriptor_ids: np.ndarray | None = field(default=None, repr=False)   # (P,)
    pixels: np.ndarray | None = field(default=None, repr=False)           # (P, 2) splat (col, row)
    n_pairs: int = 0
    surviving: np.ndarray | None = field(default=None, repr=False)        # (n_pairs,) bool
    seed: int | None = None

    @property
    def shape(self):
        return self.features.shape


SyntheticScene = Scene


def _random_unit(rng, n, c):
    v = rng.standard_normal((n, c))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _visible(K, X, height, width, d_min, d_max):
    z = X[..., 2]
    ok = (z >= d_min) & (z <= d_max)
    px = np.full(X.shape[:-1] + (3,), -1.0)
    px[ok] = project(K, X[ok])
    ok &= (px[..., 0] >= -0.5) & (px[..., 0] < width - 0.5)
    ok &= (px[..., 1] >= -0.5) & (px[..., 1] < height - 0.5)
    return ok, px


def _sample_pairs(rng, K, plane, frustum_samples, height, width, d_min, d_max):
    """Reflect ``frustum_samples`` random frustum points; keep those whose mirror is visible."""
    uv = rng.uniform((-0.5, -0.5), (width - 0.5, height - 0.5), size=(frustum_samples, 2))
    d = rng.uniform(d_min, d_max, size=frustum_samples)
    X = backproject(K, np.column_stack([uv, d]))
    X2 = reflect_point(plane, X)
    ok, px2 = _visible(K, X2, height, width, d_min, d_max)
    # a pair splatting onto a single pixel lies on the plane and shows no symmetry
    same = (np.rint(uv[:, 0]) == np.rint(px2[:, 0])) & (np.rint(uv[:, 1]) == np.rint(px2[:, 1]))
    ok &= ~same
    return X[ok], X2[ok]


def generate_scene(seed, n_pairs=DEFAULT_PAIRS, n_distractors=DEFAULT_DISTRACTORS, K=None,
                   noise_sigma=0.0, height=64, width=64, channels=64,
                   d_min=D_MIN, d_max=D_MAX, noise_floor=1.0, max_planes=1000, frustum_samples=FRUSTUM_SAMPLES):
    """Build a feature map with a known mirror plane.

    ``noise_sigma`` adds i.i.d. Gaussian noise to every channel of every
    pixel after the pairs are splatted. Background descriptors are unit
    vectors scaled by ``noise_floor``.

    A drawn plane is kept only if at least ``n_pairs`` of
    ``frustum_samples`` random frustum points have a visible mirror, which
    favours planes whose symmetric region fills a good part of the view.
    Raises GenerationFailedError when no plane qualifies within
    ``max_planes`` draws.
    """
    if n_pairs < 1:
        raise InvalidInputError(f"n_pairs must be >= 1, got {n_pairs}")
    if n_distractors < 0 or noise_sigma < 0:
        raise InvalidInputError("n_distractors and noise_sigma must be non-negative")
    K = K or default_intrinsics(height, width)
    rng = np.random.default_rng(seed)

    for _ in range(max_planes):
        n = rng.standard_normal(3)
        plane = MirrorPlane.from_vector(n)
        X, X2 = _sample_pairs(rng, K, plane, frustum_samples, height, width, d_min, d_max)
        if len(X) >= n_pairs:
            X, X2 = X[:n_pairs], X2[:n_pairs]
            break
    else:
        raise GenerationFailedError(
            f"no plane with {n_pairs} visible symmetric pairs after {max_planes} draws")

    features = (noise_floor * _random_unit(rng, height * width, channels)).reshape(height, width, channels)

    # pairs first, then distractors; a later splat overwrites an earlier one
    uv = rng.uniform((-0.5, -0.5), (width - 0.5, height - 0.5), size=(n_distractors, 2))
    dd = rng.uniform(d_min, d_max, size=n_distractors)
    Xd = backproject(K, np.column_stack([uv, dd])) if n_distractors else np.zeros((0, 4))
    points = np.empty((2 * n_pairs + n_distractors, 4))
    points[0:2 * n_pairs:2] = X
    points[1:2 * n_pairs:2] = X2
    points[2 * n_pairs:] = Xd
    ids = np.concatenate([np.repeat(np.arange(n_pairs), 2), n_pairs + np.arange(n_distractors)])
    descriptors = _random_unit(rng, n_pairs + n_distractors, channels)

    pixels = np.rint(project(K, points)[:, :2]).astype(np.int64)
    owner = np.full((height, width), -1, dtype=np.int64)
    for row, (col, r) in enumerate(pixels):
        owner[r, col] = ids[row]
        features[r, col] = descriptors[ids[row]]
    pair_px = pixels[:2 * n_pairs].reshape(n_pairs, 2, 2)
    surviving = ((owner[pair_px[:, 0, 1], pair_px[:, 0, 0]] == np.arange(n_pairs))
                 & (owner[pair_px[:, 1, 1], pair_px[:, 1, 0]] == np.arange(n_pairs)))

    if noise_sigma > 0:
        features = features + rng.normal(0.0, noise_sigma, size=features.shape)

    return Scene(features.astype(np.float32), K, plane, points[:, :3].copy(), ids, pixels,
                 n_pairs, surviving, seed)


# --- scene files ---------------------------------------------------------

def write_scene(scene, path):
    """Write ``<path>`` (JSON header) and ``<stem>.f32`` (little-endian float32 blob)."""
    path = Path(path)
    h, w, c = scene.features.shape
    blob = np.ascontiguousarray(scene.features, dtype="<f4").tobytes()
    blob_path = path.with_suffix(".f32")
    header = {
        "version": SCENE_VERSION,
        "height": h,
        "width": w,
        "channels": c,
        "intrinsics": scene.intrinsics.as_dict(),
        "gt_normal": None if scene.gt_plane is None else [float(x) for x in scene.gt_plane.normal],
        "blob_path": blob_path.name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    blob_path.write_bytes(blob)
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def _positive_int(header, key):
    v = header.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
        raise SceneFormatError(f"header field {key!r} must be a positive integer, got {v!r}")
    return v


def read_scene(path):
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneFormatError(f"cannot read scene header {path}: {exc}") from exc
    if not isinstance(header, dict):
        raise SceneFormatError("scene header must be a JSON object")
    if header.get("version") != SCENE_VERSION:
        raise SceneFormatError(f"unsupported scene version {header.get('version')!r}")
    h, w, c = (_positive_int(header, k) for k in ("height", "width", "channels"))

    intr = header.get("intrinsics")
    try:
        K = CameraIntrinsics(**{k: float(intr[k]) for k in ("fx", "fy", "cx", "cy")})
    except (TypeError, KeyError, ValueError) as exc:
        raise SceneFormatError(f"bad intrinsics {intr!r}: {exc}") from exc

    gt = header.get("gt_normal")
    plane = None
    if gt is not None:
        try:
            n = np.asarray(gt, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SceneFormatError(f"bad gt_normal {gt!r}") from exc
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise SceneFormatError(f"gt_normal must be a unit 3-vector, got {gt!r}")
        plane = MirrorPlane(n / np.linalg.norm(n))

    blob_name = header.get("blob_path")
    if not isinstance(blob_name, str):
        raise SceneFormatError("missing blob_path")
    try:
        blob = (path.parent / blob_name).read_bytes()
    except OSError as exc:
        raise SceneFormatError(f"cannot read blob {blob_name}: {exc}") from exc
    expected = h * w * c * 4
    if len(blob) < expected:
        raise SceneFormatError(f"truncated blob: {len(blob)} bytes, expected {expected}")
    if len(blob) != expected:
        raise SceneFormatError(f"blob size {len(blob)} does not match header shape ({expected} bytes)")
    if hashlib.sha256(blob).hexdigest() != header.get("blob_sha256"):
        raise SceneFormatError("blob checksum mismatch")
    features = np.frombuffer(blob, dtype="<f4").reshape(h, w, c).astype(np.float32)
    return Scene(features, K, plane)
