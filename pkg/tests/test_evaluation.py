import csv
import json

import numpy as np
import pytest

from symdet.errors import InvalidInputError
from symdet.evaluation import aa_at, accuracy, angular_errors, evaluate
from tests.conftest import random_unit


def riemann_aa(errors, theta, points=10_000):
    # midpoint rule on the step curve
    ts = theta * (np.arange(points) + 0.5) / points
    return float(np.mean([(np.asarray(errors) < t).mean() for t in ts]))


class TestAA:
    def test_single_sample(self):
        assert aa_at([1.0], 3.0) == pytest.approx(2 / 3, abs=1e-4)

    def test_perfect_and_hopeless(self):
        assert aa_at([0.0, 0.0], 5.0) == 1.0
        assert aa_at([6.0, 90.0], 5.0) == 0.0

    @pytest.mark.parametrize("e,theta", [(0.0, 1.0), (0.5, 1.0), (2.5, 10.0), (12.0, 10.0), (3.0, 3.0)])
    def test_single_closed_form(self, e, theta):
        assert aa_at([e], theta) == pytest.approx(max(0.0, 1 - e / theta), abs=1e-12)

    def test_riemann_agreement(self, rng):
        errors = rng.exponential(3.0, 200)
        for theta in (1.0, 3.0, 5.0, 10.0):
            assert abs(aa_at(errors, theta) - riemann_aa(errors, theta)) < 1e-4

    def test_monotone_in_theta(self, rng):
        errors = rng.exponential(4.0, 300)
        values = [aa_at(errors, t) for t in np.linspace(0.1, 30, 200)]
        assert np.all(np.diff(values) >= 0)

    def test_errors_raise(self):
        with pytest.raises(InvalidInputError):
            aa_at([], 3.0)
        with pytest.raises(InvalidInputError):
            aa_at([1.0], 0.0)


class TestAngularErrors:
    def test_sign_invariant(self, rng):
        n = random_unit(rng, 10)
        np.testing.assert_allclose(angular_errors(n, -n), 0.0, atol=1e-6)

    def test_values(self):
        th = np.radians(1.0)
        e = angular_errors([[0, 0, -1.0]], [[np.sin(th), 0, -np.cos(th)]])
        assert e[0] == pytest.approx(1.0, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            angular_errors([[0, 0, -1.0]], [])


def test_accuracy():
    assert accuracy([0.5, 1.0, 2.0, 7.0], 1.0) == 0.25


def test_report_files(tmp_path):
    report = evaluate([1.0, 4.0], thresholds=(3.0, 5.0), curve_points=10)
    assert report.aa == {3.0: pytest.approx(1 / 3), 5.0: pytest.approx(0.5)}
    report.write_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["count"] == 2 and d["aa"]["3"] == pytest.approx(1 / 3)
    report.write_curve_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["threshold_deg", "accuracy"]
    assert len(rows) == 11
    assert float(rows[-1][1]) == 1.0
