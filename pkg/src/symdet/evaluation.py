"""Angular errors between plane normals and area under the angle-accuracy curve."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .hemisphere import angle_between

DEFAULT_THRESHOLDS = (1.0, 3.0, 5.0, 10.0)
CURVE_POINTS = 1000


def _normal(p):
    return np.asarray(getattr(p, "normal", p), dtype=np.float64)


def angular_errors(preds, gts):
    """Unsigned angle in degrees between each prediction and its ground truth."""
    if len(preds) != len(gts):
        raise InvalidInputError(f"{len(preds)} predictions but {len(gts)} ground truths")
    if len(preds) == 0:
        return np.zeros(0)
    return angle_between(np.stack([_normal(p) for p in preds]), np.stack([_normal(g) for g in gts]))


def accuracy(errors, t):
    """Fraction of errors strictly below ``t``."""
    errors = np.asarray(errors, dtype=np.float64)
    return float(np.mean(errors < t))


def aa_at(errors, theta):
    """Normalized area under the accuracy curve on ``[0, theta]``.

    Each error ``e`` is below ``t`` for ``t`` in ``(e, theta]``, so it
    contributes ``max(0, theta - e)`` to the integral of the step curve.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise InvalidInputError("cannot compute AA of an empty error list")
    if not theta > 0:
        raise InvalidInputError(f"threshold must be positive, got {theta}")
    return float(np.sum(np.clip(theta - errors, 0.0, None)) / (errors.size * theta))


@dataclass
class EvalReport:
    errors: np.ndarray
    aa: dict
    curve_thresholds: np.ndarray = field(repr=False)
    curve_accuracy: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "count": int(self.errors.size),
            "errors_deg": [float(e) for e in self.errors],
            "mean_error_deg": float(np.mean(self.errors)),
            "median_error_deg": float(np.median(self.errors)),
            "aa": {f"{t:g}": v for t, v in self.aa.items()},
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_curve_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_deg", "accuracy"])
            for t, a in zip(self.curve_thresholds, self.curve_accuracy):
                w.writerow([f"{t:.6f}", f"{a:.6f}"])


def evaluate(errors, thresholds=DEFAULT_THRESHOLDS, curve_points=CURVE_POINTS):
    errors = np.asarray(errors, dtype=np.float64)
    aa = {float(t): aa_at(errors, t) for t in thresholds}
    t_max = max(thresholds)
    ts = t_max * np.arange(1, curve_points + 1) / curve_points
    acc = (errors[None, :] < ts[:, None]).mean(axis=1)
    return EvalReport(errors, aa, ts, acc)
