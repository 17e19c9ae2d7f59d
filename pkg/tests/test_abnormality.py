import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from action_region.abnormality import (AbnormalityDetector, ColorHistogramSceneClassifier,
                                       FileSceneProvider, ScenePrior, ScenePriorTable,
                                       abd_decision, color_histogram, evaluate_abnormality,
                                       learn_scene_prior, posterior_action_given_scene,
                                       scene_probability)
from action_region.classifier import Distribution
from action_region.exceptions import DataError, FormatError, NumericalError, ProviderError
from action_region.synthetic import SCENES, SCENE_TINTS, scene_background

probability = st.floats(0, 1)


# ------------------------------------------------------------------ posterior and ABD

def test_posterior_worked_examples():
    assert posterior_action_given_scene(0.6, 1.0, 1.0) == (0.6, 0.6)
    assert posterior_action_given_scene(0.37, 0.5, 0.0) == (0.0, 0.0)
    raw, clamped = posterior_action_given_scene(0.9, 0.3, 0.9)
    assert raw == pytest.approx(2.7) and clamped == 1.0


def test_posterior_errors():
    with pytest.raises(NumericalError):
        posterior_action_given_scene(0.5, 0.0, 0.5)
    with pytest.raises(DataError):
        posterior_action_given_scene(1.5, 0.5, 0.5)


def test_abd_worked_examples():
    d = abd_decision(0.9, 0.2)
    assert d.abd_index == pytest.approx(0.7) and d.abnormal
    d = abd_decision(0.6, 0.6)
    assert d.abd_index == 0.0 and not d.abnormal
    d = abd_decision(1.0, 0.5)
    assert d.abd_index == 0.5 and not d.abnormal
    assert d.threshold == 0.5


@settings(max_examples=200, deadline=None)
@given(probability, probability, probability)
def test_abd_range_and_flag(p_a, p_as, thr):
    d = abd_decision(p_a, p_as, thr)
    assert -1.0 <= d.abd_index <= 1.0
    assert d.abnormal == (d.abd_index > thr)
    if d.abnormal and thr >= 0:
        assert d.abd_index > 0


@settings(max_examples=200, deadline=None)
@given(probability, probability, probability)
def test_larger_posterior_never_flips_to_abnormal(p_a, lo, hi):
    lo, hi = sorted((lo, hi))
    assert abd_decision(p_a, hi).abnormal <= abd_decision(p_a, lo).abnormal


@settings(max_examples=100, deadline=None)
@given(probability, st.floats(1e-3, 1), probability)
def test_decision_is_pure(p_a, p_s, p_sa):
    raw, clamped = posterior_action_given_scene(p_a, p_s, p_sa)
    assert (raw, clamped) == posterior_action_given_scene(p_a, p_s, p_sa)
    assert 0 <= clamped <= 1
    assert abd_decision(p_a, clamped) == abd_decision(p_a, clamped)


# ------------------------------------------------------------------ prior

def test_prior_all_in_one_scene():
    table = learn_scene_prior(["eat"] * 10, ["kitchen"] * 10)
    assert table.lookup("eat", "kitchen") == 1.0
    assert sum(table.lookup("eat", s) for s in SCENES if s != "kitchen") == 0.0
    assert table.counts.sum() == 10


def test_prior_counting():
    table = learn_scene_prior(["wave"] * 4, ["office", "office", "corridor", "office"])
    np.testing.assert_allclose(table.probabilities[0], [0.75, 0.25, 0, 0])


def test_prior_literal_mode():
    table = learn_scene_prior(["wave"] * 4, ["office", "office", "corridor", "office"], literal=True)
    np.testing.assert_array_equal(table.probabilities[0], [1, 0, 0, 0])
    np.testing.assert_array_equal(table.counts[0], [3, 1, 0, 0])
    freq = learn_scene_prior(["wave"] * 4, ["office", "office", "corridor", "office"])
    np.testing.assert_array_equal(freq.literal().probabilities, table.probabilities)


def test_prior_uses_argmax_of_distributions():
    dists = [Distribution(SCENES, [0.1, 0.2, 0.6, 0.1]), Distribution(SCENES, [0.5, 0.2, 0.2, 0.1])]
    table = learn_scene_prior(["eat", "eat"], dists)
    np.testing.assert_allclose(table.probabilities[0], [0.5, 0, 0.5, 0])


def test_action_with_zero_samples_is_an_error():
    with pytest.raises(DataError):
        learn_scene_prior(["eat"], ["kitchen"], action_vocabulary=("eat", "read"))
    with pytest.raises(DataError):
        learn_scene_prior(["eat"], ["beach"])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from(SCENES)), min_size=1, max_size=40))
def test_prior_matches_recount(samples):
    actions, scenes = zip(*samples)
    table = learn_scene_prior(actions, scenes)
    for a in table.actions:
        rows = [s for x, s in samples if x == a]
        for s in SCENES:
            assert table.lookup(a, s) == pytest.approx(rows.count(s) / len(rows))
    assert np.allclose(table.probabilities.sum(axis=1), 1.0)


def test_prior_table_round_trip(tmp_path):
    table = learn_scene_prior(["a", "a", "b"], ["office", "kitchen", "classroom"])
    table.save(tmp_path / "p.json")
    back = ScenePriorTable.load(tmp_path / "p.json")
    assert back.actions == table.actions and back.scenes == table.scenes
    np.testing.assert_array_equal(back.probabilities, table.probabilities)
    np.testing.assert_array_equal(back.counts, table.counts)
    (tmp_path / "bad.json").write_text('{"actions": ["a"]}')
    with pytest.raises(FormatError):
        ScenePriorTable.load(tmp_path / "bad.json")


def test_prior_rows_validated():
    with pytest.raises(DataError):
        ScenePriorTable(("a",), ("x", "y"), [[0.5, 0.4]], [[1, 1]])


def test_scene_prior_estimator():
    est = ScenePrior().fit(["a", "b"], ["office", "kitchen"])
    np.testing.assert_array_equal(est.predict_proba(["b"]), [[0, 0, 1, 0]])


# ------------------------------------------------------------------ scene providers

def test_file_scene_provider(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"labels": ["office", "kitchen", "corridor"], "probabilities": [0.8, 0.15, 0.05]}')
    dist = scene_probability(np.zeros((8, 8, 3)), FileSceneProvider(path))
    np.testing.assert_array_equal(dist.probabilities, [0.8, 0.15, 0.05])
    path.write_text('{"labels": ["office", "kitchen"], "probabilities": [1.1, -0.1]}')
    with pytest.raises(ProviderError):
        scene_probability(np.zeros((8, 8, 3)), FileSceneProvider(path))


def test_colour_histogram_sums_to_one():
    h = color_histogram(np.random.default_rng(0).random((10, 10, 3)))
    assert h.shape == (64,) and abs(h.sum() - 1) < 1e-12


def test_scene_classifier_centroid_fixed_point(tmp_path):
    frames = [np.tile(np.array(SCENE_TINTS[s]) * 0.7, (16, 16, 1)) for s in SCENES]
    model = ColorHistogramSceneClassifier().fit(frames, SCENES)
    for frame, scene in zip(frames, SCENES):
        dist = model.scene_probabilities([frame])
        assert dist.top_label == scene
    model.save(tmp_path / "scene.json")
    back = ColorHistogramSceneClassifier.load(tmp_path / "scene.json")
    np.testing.assert_array_equal(back.predict_proba(frames), model.predict_proba(frames))


def test_scene_classifier_on_textured_backgrounds():
    rng = np.random.default_rng(0)
    train = [(scene_background(rng, (32, 32), s), s) for s in SCENES for _ in range(2)]
    test = [(scene_background(rng, (32, 32), s), s) for s in SCENES]
    model = ColorHistogramSceneClassifier().fit([f for f, _ in train], [s for _, s in train])
    assert list(model.predict([f for f, _ in test])) == list(SCENES)


# ------------------------------------------------------------------ detector and evaluation

def _prior():
    return learn_scene_prior(["eat", "eat", "read"], ["kitchen", "kitchen", "office"])


def test_detector_flags_unseen_pairing():
    det = AbnormalityDetector()
    eat = Distribution(("eat", "read"), [0.9, 0.1])
    office = Distribution(SCENES, [0.7, 0.1, 0.1, 0.1])
    kitchen = Distribution(SCENES, [0.1, 0.1, 0.7, 0.1])
    assert det.decide(eat, office, _prior()).abnormal
    d = det.decide(eat, kitchen, _prior())
    assert not d.abnormal
    assert d.p_action_given_scene_raw == pytest.approx(0.9 / 0.7)
    assert d.p_action_given_scene == 1.0


def test_detector_marginal_mode():
    det = AbnormalityDetector(p_scene_mode="marginal")
    eat = Distribution(("eat", "read"), [0.6, 0.4])
    kitchen = Distribution(SCENES, [0.1, 0.1, 0.7, 0.1])
    d = det.decide(eat, kitchen, _prior())
    assert d.p_scene == pytest.approx(0.6)
    assert d.p_action_given_scene == pytest.approx(1.0)
    with pytest.raises(NumericalError):
        det.decide(eat, Distribution(SCENES, [0.1, 0.7, 0.1, 0.1]), _prior())
    with pytest.raises(DataError):
        AbnormalityDetector(p_scene_mode="other").decide(eat, kitchen, _prior())


def test_evaluate_rates():
    decisions = [abd_decision(0.9, 0.0)] * 8 + [abd_decision(0.9, 0.9)] * 8
    truths = [True] * 8 + [False] * 8
    assert evaluate_abnormality(decisions, truths).success_rate == 1.0
    truths = [False] + [True] * 7 + [False] * 7 + [True]
    report = evaluate_abnormality(decisions, truths)
    assert report.success_rate == 0.875
    assert sum(r["correct"] for r in report.records) == 14


def test_evaluate_errors():
    with pytest.raises(DataError):
        evaluate_abnormality([], [])
    with pytest.raises(DataError):
        evaluate_abnormality([abd_decision(0.5, 0.5)], [True, False])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(probability, probability, st.booleans()), min_size=1, max_size=20))
def test_evaluate_matches_recount(rows):
    decisions = [abd_decision(a, b) for a, b, _ in rows]
    report = evaluate_abnormality(decisions, [t for _, _, t in rows])
    recount = sum((d.abnormal == t) for d, (_, _, t) in zip(decisions, rows)) / len(rows)
    assert report.success_rate == recount
