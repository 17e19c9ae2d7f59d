import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from action_region.classifier import (DESCRIPTOR_LENGTH, Distribution, FileActionProvider,
                                      LinearActionClassifier, LinearModelProvider, classify,
                                      describe_crop, grid_hog, grid_mbh, load_distribution,
                                      loss_and_gradient, softmax, train_classifier)
from action_region.exceptions import DataError, DimensionMismatchError, FormatError, ProviderError
from action_region.flow import estimate_flow
from action_region.synthetic import ACTIONS, action_sequence, texture, tint

import oracles


# ------------------------------------------------------------------ descriptor

def test_constant_crop_and_zero_flow_give_zero_descriptor():
    d = describe_crop(np.full((32, 32, 3), 0.4), np.zeros((32, 32, 2)))
    assert d.shape == (DESCRIPTOR_LENGTH,) == (256,)
    assert not d.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_block_norms_are_zero_or_one(seed):
    rng = np.random.default_rng(seed)
    crop = rng.random((24, 24, 3))
    crop[:12] = 0.5
    flow = rng.standard_normal((24, 24, 4))
    d = describe_crop(crop, flow)
    norms = np.linalg.norm(d.reshape(-1, 8), axis=1)
    assert np.all((norms == 0) | (np.abs(norms - 1) < 1e-9))


def test_grid_hog_matches_oracle():
    crop = np.random.default_rng(0).random((20, 22, 3))
    ref = oracles.grid_histogram(oracles.luma(crop), 8)
    ref = ref / np.linalg.norm(ref, axis=2, keepdims=True)
    np.testing.assert_allclose(grid_hog(crop), ref.ravel(), atol=1e-9)


def test_grid_mbh_matches_oracle():
    flow = np.random.default_rng(1).standard_normal((16, 16, 2))
    ref = np.concatenate([oracles.grid_histogram(flow[:, :, 0], 4),
                          oracles.grid_histogram(flow[:, :, 1], 4)], axis=2)
    ref = ref / np.linalg.norm(ref, axis=2, keepdims=True)
    np.testing.assert_allclose(grid_mbh(flow), ref.ravel(), atol=1e-9)


def test_mbh_ignores_constant_flow_offset():
    flow = np.random.default_rng(2).standard_normal((16, 16, 2))
    np.testing.assert_allclose(grid_mbh(flow + 7.0), grid_mbh(flow), atol=1e-9)


def test_descriptor_size_mismatch():
    with pytest.raises(DimensionMismatchError):
        describe_crop(np.zeros((16, 16, 3)), np.zeros((8, 16, 2)))
    with pytest.raises(DataError):
        grid_mbh(np.zeros((16, 16, 3)))


# ------------------------------------------------------------------ model

def _separable(seed=0, n=20, d=6):
    rng = np.random.default_rng(seed)
    centres = 3 * np.eye(3, d)
    X = np.concatenate([c + 0.2 * rng.standard_normal((n, d)) for c in centres])
    y = np.repeat(["a", "b", "c"], n)
    return X, y


def test_separable_toy_set():
    X, y = _separable()
    model = LinearActionClassifier().fit(X, y)
    assert (model.predict(X) == y).all()
    assert model.score(X, y) == 1.0
    assert list(model.classes_) == ["a", "b", "c"]


def test_loss_is_non_increasing():
    X, y = _separable(1)
    hist = LinearActionClassifier(learning_rate=5.0, epochs=50).fit(X, y).loss_history_
    assert np.all(np.diff(hist) <= 0)
    assert hist[-1] < hist[0]


def test_loss_matches_oracle_and_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((7, 4))
    labels = rng.integers(0, 3, 7)
    Y = np.eye(3)[labels]
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    loss, gW, gb = loss_and_gradient(W, b, X, Y, 0.1)
    assert loss == pytest.approx(oracles.softmax_xent(W, b, X, labels, 0.1), rel=1e-12)
    nW = oracles.numeric_gradient(lambda: oracles.softmax_xent(W, b, X, labels, 0.1), W)
    nb = oracles.numeric_gradient(lambda: oracles.softmax_xent(W, b, X, labels, 0.1), b)
    np.testing.assert_allclose(gW, nW, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(gb, nb, rtol=1e-5, atol=1e-8)


def test_zero_weights_give_uniform_output():
    model = LinearActionClassifier(epochs=0).fit(*_separable())
    model.coef_[:] = 0
    model.intercept_[:] = 0
    np.testing.assert_allclose(model.predict_proba(np.ones((2, 6))), 1 / 3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100))
def test_softmax_shift_invariant(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(softmax(np.array(z) + c), p, atol=1e-9)


def test_descriptor_length_mismatch_and_single_class():
    model = LinearActionClassifier(epochs=5).fit(*_separable())
    with pytest.raises(DimensionMismatchError):
        model.predict(np.zeros((1, 5)))
    with pytest.raises(DataError):
        LinearActionClassifier().fit(np.zeros((3, 2)), ["a", "a", "a"])


def test_seeded_training_is_deterministic():
    X, y = _separable(4)
    a = train_classifier(X, y, epochs=20, seed=3)
    b = train_classifier(X, y, epochs=20, seed=3)
    assert np.array_equal(a.coef_, b.coef_)


def test_model_save_load(tmp_path):
    X, y = _separable(5)
    model = LinearActionClassifier(epochs=30).fit(X, y)
    model.save(tmp_path / "m.bin")
    back = LinearActionClassifier.load(tmp_path / "m.bin")
    assert back.get_params() == model.get_params()
    assert list(back.classes_) == list(model.classes_)
    np.testing.assert_allclose(back.predict_proba(X), model.predict_proba(X), atol=1e-5)
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        LinearActionClassifier.load(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:30])
    with pytest.raises(FormatError):
        LinearActionClassifier.load(tmp_path / "short.bin")


def test_classify_returns_distribution():
    X, y = _separable(6)
    dist = classify(X[0], LinearActionClassifier().fit(X, y))
    assert dist.top_label == "a"
    assert abs(dist.probabilities.sum() - 1) < 1e-12


# ------------------------------------------------------------------ distributions

def test_file_provider_passes_through(tmp_path):
    path = tmp_path / "d.json"
    path.write_text('{"labels": ["wave", "walk", "eat"], "probabilities": [0.7, 0.2, 0.1]}')
    dist = FileActionProvider(path).action_probabilities()
    assert dist.labels == ("wave", "walk", "eat")
    np.testing.assert_array_equal(dist.probabilities, [0.7, 0.2, 0.1])


def test_bad_stored_distributions():
    with pytest.raises(ProviderError):
        load_distribution({"labels": ["a", "b"], "probabilities": [0.5, 0.4]})
    with pytest.raises(ProviderError):
        load_distribution({"labels": ["a", "b"], "probabilities": [1.2, -0.2]})
    with pytest.raises(ProviderError):
        load_distribution({"labels": ["a"]})
    with pytest.raises(ProviderError):
        load_distribution("/nonexistent/d.json")


def test_distribution_helpers():
    a = Distribution(("x", "y"), [0.2, 0.8])
    b = Distribution(("x", "y"), [0.6, 0.4])
    assert Distribution.mean([a, b]).probabilities.tolist() == pytest.approx([0.4, 0.6])
    assert Distribution.from_dict(a.to_dict()).top_label == "y"
    with pytest.raises(DataError):
        Distribution(("x", "x"), [0.5, 0.5])


# ------------------------------------------------------------------ built-in provider

def _clips(seed, per_action):
    rng = np.random.default_rng(seed)
    out = []
    for action in ACTIONS:
        for _ in range(per_action):
            bg = tint(texture(rng, (64, 64)), (0.8, 0.8, 0.8))
            seq = action_sequence(rng, action, bg, n_frames=2, size=28, speed=2)
            out.append((seq, [estimate_flow(seq.frames[0], seq.frames[1])]))
    return out


def test_builtin_provider_beats_chance():
    side = 64
    train, test = _clips(0, 3), _clips(1, 2)
    provider = LinearModelProvider(None, L=1, side=side)
    X = np.concatenate([provider.frame_descriptors(s.frames, s.boxes, f) for s, f in train])
    y = [s.labels["action"] for s, _ in train]
    provider.model = LinearActionClassifier().fit(X, y)
    hits = [provider.action_probabilities(s.frames, s.boxes, f).top_label == s.labels["action"]
            for s, f in test]
    assert np.mean(hits) > 1 / len(ACTIONS)


def test_builtin_provider_wraps_errors():
    provider = LinearModelProvider(LinearActionClassifier(epochs=1).fit(*_separable()), L=2)
    with pytest.raises(ProviderError):
        provider.action_probabilities(np.zeros((2, 16, 16, 3)), [(0, 0, 8, 8)] * 2, [np.zeros((16, 16, 2))])
