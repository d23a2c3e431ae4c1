"""Timing of the compact correlation path against the 4D feature-volume baseline.

Both paths score the same Fibonacci lattice of planes on the same synthetic
scene and reduce to identical per-plane numbers, so the comparison isolates
the cost of gathering ``2C`` feature channels per cell against a single
pre-computed correlation.
"""
import csv
import hashlib
import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CorrectnessError, InvalidInputError
from .featuremap import build_correlation, normalize
from .hemisphere import fibonacci_hemisphere
from .synth import generate_scene
from .volume import DepthSweep, build_feature_volume_4d, build_volume, feature_volume_dot, reduce_score

SCORE_TOL = 1e-4
NERD_CHANNELS = 32
F32 = 4


@dataclass
class BenchReport:
    height: int
    width: int
    channels: int
    depth: int
    plane_counts: list
    repeats: int
    threads: int
    # element and byte counts (closed form)
    corr_onetime_elements: int
    corr_per_plane_elements: int
    baseline_per_plane_elements: int
    baseline32_per_plane_elements: int
    per_plane_element_ratio: float
    corr_onetime_bytes: int
    corr_per_plane_bytes: int
    baseline_per_plane_bytes: int
    # correctness gate
    argmax_index: int
    max_score_diff: float
    scores_sha256: str
    # timings, seconds (median over repeats), keyed by plane count
    corr_onetime_s: float = 0.0
    corr_total_s: dict = field(default_factory=dict)
    baseline_total_s: dict = field(default_factory=dict)
    corr_per_plane_s: float = 0.0
    baseline_per_plane_s: float = 0.0
    corr_throughput: float = 0.0
    baseline_throughput: float = 0.0
    speedup: float = 0.0
    amortization_slope_s: float = 0.0
    amortization_intercept_s: float = 0.0
    amortization_r2: float = 0.0

    TIMING_FIELDS = ("corr_onetime_s", "corr_total_s", "baseline_total_s", "corr_per_plane_s",
                     "baseline_per_plane_s", "corr_throughput", "baseline_throughput", "speedup",
                     "amortization_slope_s", "amortization_intercept_s", "amortization_r2")

    def to_dict(self, timing=True):
        d = asdict(self)
        for key in ("corr_total_s", "baseline_total_s"):
            d[key] = {str(k): v for k, v in d[key].items()}
        if not timing:
            for key in self.TIMING_FIELDS:
                d.pop(key)
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["planes", "corr_total_s", "baseline_total_s", "corr_elements", "baseline_elements"])
            for n in self.plane_counts:
                w.writerow([n, f"{self.corr_total_s[n]:.6f}", f"{self.baseline_total_s[n]:.6f}",
                            self.corr_onetime_elements + n * self.corr_per_plane_elements,
                            n * self.baseline_per_plane_elements])


def _map(fn, items, pool):
    return list(pool.map(fn, items)) if pool else [fn(x) for x in items]


def correlation_path(fm, K, normals, sweep, pool=None):
    corr = build_correlation(fm)
    return np.array(_map(lambda n: reduce_score(build_volume(corr, K, n, sweep)), normals, pool))


def baseline_path(fm, K, normals, sweep, pool=None):
    return np.array(_map(
        lambda n: reduce_score(feature_volume_dot(build_feature_volume_4d(fm, K, n, sweep))), normals, pool))


def check_rankings(a, b, tol=SCORE_TOL):
    """Raise CorrectnessError unless the two score vectors agree and rank planes alike."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    finite = np.isfinite(a)
    if not np.array_equal(finite, np.isfinite(b)) or not np.array_equal(a[~finite], b[~finite]):
        raise CorrectnessError("paths disagree on which planes have evidence")
    diff = float(np.max(np.abs(a[finite] - b[finite]), initial=0.0))
    if not diff <= tol:
        raise CorrectnessError(f"paths disagree: max score difference {diff:.3g} > {tol}")
    if int(np.argmax(a)) != int(np.argmax(b)):
        raise CorrectnessError("paths select different planes")
    order = np.argsort(-a[finite], kind="stable")
    if np.any(np.diff(b[finite][order]) > tol):
        raise CorrectnessError("paths rank planes differently")
    return diff


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def linear_fit(x, y):
    """Least-squares ``y = a x + b``; returns ``(a, b, r2)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def run_bench(height=64, width=64, channels=64, depth=64, planes=(256,), repeats=3, threads=1, seed=0):
    """Time both scoring paths; refuses to report if they disagree.

    ``planes`` may be one count or several; the largest is used for the
    correctness gate and the throughput figures, and all of them feed the
    affine fit of correlation-path time against plane count.
    """
    counts = sorted({int(p) for p in np.atleast_1d(planes)})
    if not counts or counts[0] < 1:
        raise InvalidInputError("plane counts must be positive")
    if repeats < 3:
        raise InvalidInputError("need at least 3 repeats")
    if min(height, width, channels) < 1 or depth < 2:
        raise InvalidInputError("bad benchmark shape")

    n_pairs = max(1, height * width * 800 // 4096)
    scene = generate_scene(seed, n_pairs=n_pairs, n_distractors=n_pairs // 8, height=height, width=width,
                           channels=channels, frustum_samples=height * width)
    fm = normalize(scene.features).astype(np.float32)
    K = scene.intrinsics
    sweep = DepthSweep(count=depth)
    top = counts[-1]
    normals = list(fibonacci_hemisphere(top).normals)

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        # the gate doubles as the warm-up run
        fast = correlation_path(fm, K, normals, sweep, pool)
        slow = baseline_path(fm, K, normals, sweep, pool)
        diff = check_rankings(fast, slow)

        dhw = depth * height * width
        report = BenchReport(
            height, width, channels, depth, counts, repeats, threads,
            corr_onetime_elements=(height * width) ** 2,
            corr_per_plane_elements=dhw,
            baseline_per_plane_elements=2 * channels * dhw,
            baseline32_per_plane_elements=NERD_CHANNELS * dhw,
            per_plane_element_ratio=(2 * channels * dhw) / dhw,
            corr_onetime_bytes=(height * width) ** 2 * F32,
            corr_per_plane_bytes=dhw * (F32 + 1),
            baseline_per_plane_bytes=2 * channels * dhw * F32 + dhw * (F32 + 1),
            argmax_index=int(np.argmax(fast)),
            max_score_diff=diff,
            scores_sha256=hashlib.sha256(np.ascontiguousarray(fast, dtype="<f8").tobytes()).hexdigest(),
        )

        report.corr_onetime_s = _median_time(lambda: build_correlation(fm), repeats)
        for n in counts:
            # a full lattice per count keeps the mix of cheap oblique and
            # expensive frontal planes the same at every size
            sub = list(fibonacci_hemisphere(n).normals)
            report.corr_total_s[n] = _median_time(lambda: correlation_path(fm, K, sub, sweep, pool), repeats)
            report.baseline_total_s[n] = _median_time(lambda: baseline_path(fm, K, sub, sweep, pool), repeats)
    finally:
        if pool:
            pool.shutdown()

    report.corr_per_plane_s = (report.corr_total_s[top] - report.corr_onetime_s) / top
    report.baseline_per_plane_s = report.baseline_total_s[top] / top
    report.corr_throughput = top / report.corr_total_s[top]
    report.baseline_throughput = top / report.baseline_total_s[top]
    report.speedup = report.corr_throughput / report.baseline_throughput
    if len(counts) >= 2:
        a, b, r2 = linear_fit(counts, [report.corr_total_s[n] for n in counts])
        report.amortization_slope_s, report.amortization_intercept_s, report.amortization_r2 = a, b, r2
    else:
        report.amortization_slope_s = report.corr_per_plane_s
        report.amortization_intercept_s = report.corr_onetime_s
        report.amortization_r2 = float("nan")
    return report
