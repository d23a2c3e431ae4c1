import numpy as np
import pytest

from symdet.errors import InvalidInputError, NoEvidenceError
from symdet.featuremap import build_correlation, normalize
from symdet.geometry import default_intrinsics
from symdet.hemisphere import angle_between, fibonacci_hemisphere
from symdet.search import SearchConfig, detect_from_correlation, multi_stage_detect
from symdet.synth import Scene, generate_scene
from symdet.volume import DepthSweep

SMALL = SearchConfig(stage_counts=(32, 16, 16), sweep=DepthSweep(count=16))


@pytest.fixture(scope="module")
def scene():
    return generate_scene(5)


@pytest.fixture(scope="module")
def result(scene):
    return multi_stage_detect(scene)


class TestConfig:
    def test_defaults(self):
        cfg = SearchConfig()
        assert cfg.stage_counts == (128, 64, 64)
        assert cfg.deltas == (90.0, 12.86, 3.28)
        assert cfg.reducer == "max-depth"

    @pytest.mark.parametrize("kwargs", [
        dict(stage_counts=(8, 8), deltas=(90.0,)),
        dict(deltas=(80.0, 10.0, 3.0)),
        dict(deltas=(90.0, 3.0, 10.0)),
        dict(stage_counts=(8, 0, 8)),
        dict(reducer="median"),
        dict(scorer="nn"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            SearchConfig(**kwargs)

    def test_edgeconv_needs_head(self, scene):
        with pytest.raises(InvalidInputError):
            multi_stage_detect(scene, SearchConfig(scorer="edgeconv"))


class TestDetect:
    def test_recovers_ground_truth(self, scene, result):
        assert angle_between(result.plane.normal, scene.gt_plane.normal) < 4.0

    def test_volume_count(self, result):
        assert result.n_volumes == 256
        assert [len(s.lattice) for s in result.per_stage] == [128, 64, 64]

    def test_stage_zero_is_hemisphere(self, result):
        np.testing.assert_allclose(result.per_stage[0].lattice.normals, fibonacci_hemisphere(128).normals,
                                   rtol=0, atol=1e-12)

    def test_refinement_containment(self, result):
        for prev, cur in zip(result.per_stage, result.per_stage[1:]):
            assert angle_between(cur.lattice.normals, prev.best_normal).max() <= cur.delta + 1e-6

    def test_argmax_and_confidence(self, result):
        for st in result.per_stage:
            assert st.argmax == int(np.argmax(st.scores))
        last = result.per_stage[-1]
        assert result.confidence == last.scores[last.argmax]
        np.testing.assert_array_equal(result.plane.normal, last.best_normal)

    def test_deterministic(self, scene, result):
        again = multi_stage_detect(scene)
        for a, b in zip(result.per_stage, again.per_stage):
            assert a.scores.tobytes() == b.scores.tobytes()

    def test_threads_match_serial(self):
        scene = generate_scene(2, height=32, width=32, channels=16, n_pairs=200, n_distractors=25,
                               frustum_samples=1024)
        a = multi_stage_detect(scene, SMALL, threads=1)
        b = multi_stage_detect(scene, SMALL, threads=3)
        for sa, sb in zip(a.per_stage, b.per_stage):
            assert sa.scores.tobytes() == sb.scores.tobytes()

    def test_feature_scale_invariance(self):
        scene = generate_scene(4, height=32, width=32, channels=16, n_pairs=200, n_distractors=25,
                               frustum_samples=1024)
        scaled = Scene(scene.features * 7.5, scene.intrinsics, scene.gt_plane)
        a = multi_stage_detect(scene, SMALL)
        b = multi_stage_detect(scaled, SMALL)
        assert [s.argmax for s in a.per_stage] == [s.argmax for s in b.per_stage]

    def test_single_candidate_stages(self, scene):
        r = multi_stage_detect(scene, SearchConfig(stage_counts=(1, 1), deltas=(90.0, 12.86)))
        assert r.n_volumes == 2
        assert [s.argmax for s in r.per_stage] == [0, 0]
        np.testing.assert_allclose(r.per_stage[0].best_normal, fibonacci_hemisphere(1).normals[0], atol=1e-12)

    def test_single_candidate_chain_runs_out_of_view(self, scene):
        # the third lone node is so oblique that no mirrored pixel stays in the image
        with pytest.raises(NoEvidenceError) as info:
            multi_stage_detect(scene, SearchConfig(stage_counts=(1, 1, 1)))
        assert info.value.stage == 2

    def test_mean_reducer_runs(self):
        scene = generate_scene(1, height=32, width=32, channels=16, n_pairs=200, n_distractors=25,
                               frustum_samples=1024)
        r = multi_stage_detect(scene, SearchConfig(stage_counts=(16, 8, 8), reducer="mean",
                                                   sweep=DepthSweep(count=8)))
        assert np.isfinite(r.confidence)


def test_no_evidence():
    # a one-pixel image has no partner other than itself
    corr = build_correlation(normalize(np.ones((1, 1, 4))))
    with pytest.raises(NoEvidenceError) as info:
        detect_from_correlation(corr, default_intrinsics(1, 1), SearchConfig(stage_counts=(4, 4, 4)))
    assert info.value.stage == 0
