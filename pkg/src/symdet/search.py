"""Coarse-to-fine search for the mirror plane over the hemisphere."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NoEvidenceError
from .featuremap import build_correlation, normalize
from .geometry import MirrorPlane
from .hemisphere import POLE, SphericalLattice, cap_lattice, knn_graph
from .volume import REDUCERS, DepthSweep, build_volume, reduce_score

STAGE_COUNTS = (128, 64, 64)
STAGE_DELTAS = (90.0, 12.86, 3.28)
SCORERS = ("reducer", "edgeconv")
KNN = 16


@dataclass(frozen=True)
class SearchConfig:
    stage_counts: tuple = STAGE_COUNTS
    deltas: tuple = STAGE_DELTAS
    reducer: str = "max-depth"
    scorer: str = "reducer"
    sweep: DepthSweep = DepthSweep()
    exclude_self: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage_counts", tuple(int(c) for c in self.stage_counts))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if len(self.stage_counts) < 1 or len(self.stage_counts) != len(self.deltas):
            raise InvalidInputError("stage_counts and deltas must be non-empty and of equal length")
        if any(c < 1 for c in self.stage_counts):
            raise InvalidInputError("every stage needs at least one candidate")
        if self.deltas[0] != 90.0:
            raise InvalidInputError("the first stage must cover the hemisphere (delta 90)")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise InvalidInputError("deltas must be strictly decreasing")
        if self.reducer not in REDUCERS:
            raise InvalidInputError(f"unknown reducer {self.reducer!r}")
        if self.scorer not in SCORERS:
            raise InvalidInputError(f"unknown scorer {self.scorer!r}")

    def as_dict(self):
        return {
            "stage_counts": list(self.stage_counts),
            "deltas": list(self.deltas),
            "reducer": self.reducer,
            "scorer": self.scorer,
            "d_min": self.sweep.d_min,
            "d_max": self.sweep.d_max,
            "depth_samples": self.sweep.count,
        }


@dataclass
class StageResult:
    lattice: SphericalLattice
    delta: float
    scores: np.ndarray
    argmax: int

    @property
    def best_normal(self):
        return self.lattice.normals[self.argmax]


@dataclass
class DetectionResult:
    plane: MirrorPlane
    confidence: float
    per_stage: list = field(default_factory=list)
    n_volumes: int = 0


def _score_stage(corr, K, lattice, cfg, pool, head):
    def volume(n):
        return build_volume(corr, K, MirrorPlane(n), cfg.sweep, cfg.exclude_self)

    normals = list(lattice.normals)
    if cfg.scorer == "reducer":
        def one(n):
            return reduce_score(volume(n), cfg.reducer)
        scores = list(pool.map(one, normals)) if pool else [one(n) for n in normals]
        return np.asarray(scores, dtype=np.float64)

    from .scorer import descriptor, head_forward
    descs = list(pool.map(lambda n: descriptor(head, volume(n)), normals)) if pool else \
        [descriptor(head, volume(n)) for n in normals]
    if len(normals) == 1:
        graph = np.zeros((1, 0), dtype=np.intp)
    else:
        graph = knn_graph(lattice, KNN)
    lattice.knn = graph
    return head_forward(head, np.stack(descs), graph).astype(np.float64)


def detect_from_correlation(corr, K, cfg=SearchConfig(), threads=1, head=None):
    if cfg.scorer == "edgeconv" and head is None:
        raise InvalidInputError("the edgeconv scorer needs a trained head")
    stages = []
    center = POLE
    n_volumes = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for i, (count, delta) in enumerate(zip(cfg.stage_counts, cfg.deltas)):
            lattice = cap_lattice(center, delta, count, stage_index=i)
            scores = _score_stage(corr, K, lattice, cfg, pool, head)
            n_volumes += len(lattice)
            if not np.any(np.isfinite(scores)):
                raise NoEvidenceError(i)
            best = int(np.argmax(scores))
            stages.append(StageResult(lattice, delta, scores, best))
            center = lattice.normals[best]
    finally:
        if pool:
            pool.shutdown()
    last = stages[-1]
    return DetectionResult(MirrorPlane(last.best_normal), float(last.scores[last.argmax]), stages, n_volumes)


def multi_stage_detect(scene, cfg=SearchConfig(), threads=1, head=None):
    """Find the principal mirror plane of ``scene``.

    Stage 0 scores a Fibonacci lattice over the whole hemisphere; each
    later stage scores a cap of half-angle ``deltas[i]`` around the previous
    stage's best normal. Ties go to the lowest lattice index.
    """
    corr = build_correlation(normalize(scene.features))
    return detect_from_correlation(corr, scene.intrinsics, cfg, threads, head)
