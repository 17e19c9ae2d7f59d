"""Scene-conditioned abnormal behaviour detection.

A recognised action A with probability P(A) is judged against the recognised
scene S through a learned scene-given-action prior:

    P(A | S) = P(S | A) P(A) / P(S)        (clamped to [0, 1])
    abd      = P(A) - P(A | S)

and flagged abnormal when ``abd > threshold``. By default P(S) is the top
entry of the scene distribution; ``p_scene_mode="marginal"`` uses
sum_i P(S | A_i) P(A_i) instead.
"""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame
from .classifier import Distribution, load_distribution, softmax
from .exceptions import DataError, FormatError, NumericalError, ProviderError
from .synthetic import SCENES

SceneDistribution = Distribution
DEFAULT_THRESHOLD = 0.5


# ----------------------------------------------------------------- scene providers

def color_histogram(frame, bins=4):
    """Joint RGB histogram with ``bins`` levels per channel, summing to 1."""
    frame = check_frame(frame, channels=3)
    idx = np.minimum((frame * bins).astype(np.intp), bins - 1)
    flat = (idx[..., 0] * bins + idx[..., 1]) * bins + idx[..., 2]
    hist = np.bincount(flat.ravel(), minlength=bins ** 3).astype(np.float64)
    return hist / hist.sum()


class ColorHistogramSceneClassifier(ClassifierMixin, BaseEstimator):
    """Nearest-centroid scene classifier on joint colour histograms.

    Probabilities are ``softmax(-d / temperature)`` of the L1 distances to
    the class centroids.
    """

    def __init__(self, bins=4, temperature=0.1):
        self.bins = bins
        self.temperature = temperature

    def _features(self, frames):
        return np.stack([color_histogram(f, self.bins) for f in frames])

    def fit(self, frames, labels):
        X = self._features(frames)
        labels = np.array([str(v) for v in labels])
        if len(labels) != len(X):
            raise DataError(f"{len(X)} frames for {len(labels)} labels")
        self.classes_ = np.array(sorted(set(labels)))
        self.centroids_ = np.stack([X[labels == c].mean(axis=0) for c in self.classes_])
        return self

    def predict_proba(self, frames):
        check_is_fitted(self, "centroids_")
        X = self._features(frames)
        d = np.abs(X[:, None, :] - self.centroids_[None]).sum(axis=2)
        return softmax(-d / self.temperature)

    def predict(self, frames):
        return self.classes_[np.argmax(self.predict_proba(frames), axis=1)]

    def scene_probabilities(self, frames):
        """Mean of the per-frame distributions."""
        return Distribution(tuple(self.classes_), self.predict_proba(frames).mean(axis=0))

    def save(self, path):
        check_is_fitted(self, "centroids_")
        doc = {"params": self.get_params(), "labels": list(self.classes_),
               "centroids": self.centroids_.tolist()}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
            model = cls(**doc["params"])
            model.classes_ = np.array(doc["labels"])
            model.centroids_ = np.asarray(doc["centroids"], dtype=np.float64)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: not a scene classifier file ({exc})") from exc
        return model


class FileSceneProvider:
    """Stored ``{"labels": [...], "probabilities": [...]}`` scene distribution."""

    def __init__(self, source):
        self.source = source

    def scene_probabilities(self, frames=None):
        return load_distribution(self.source)


def scene_probability(frames, provider):
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[None]
    try:
        return provider.scene_probabilities(frames)
    except ProviderError:
        raise
    except (DataError, ValueError) as exc:
        raise ProviderError(f"scene provider failed: {exc}") from exc


# ----------------------------------------------------------------- prior

@dataclass(frozen=True)
class ScenePriorTable:
    """P(scene | action), one row per action, with the counts it came from."""
    actions: tuple
    scenes: tuple
    probabilities: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        c = np.asarray(self.counts, dtype=np.int64)
        shape = (len(self.actions), len(self.scenes))
        if p.shape != shape or c.shape != shape:
            raise DataError(f"prior table must be {shape}, got {p.shape} / {c.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
            raise DataError("every prior row must be a distribution")
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        object.__setattr__(self, "scenes", tuple(str(s) for s in self.scenes))
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "counts", c)

    def lookup(self, action, scene):
        try:
            return float(self.probabilities[self.actions.index(action), self.scenes.index(scene)])
        except ValueError:
            raise DataError(f"({action!r}, {scene!r}) is not in the prior table") from None

    def literal(self):
        """Same counts, all of each row's mass on its most frequent scene."""
        probs = np.eye(len(self.scenes))[np.argmax(self.counts, axis=1)]
        return ScenePriorTable(self.actions, self.scenes, probs, self.counts)

    def to_dict(self):
        return {"actions": list(self.actions), "scenes": list(self.scenes),
                "probabilities": self.probabilities.ravel().tolist(),
                "counts": self.counts.ravel().tolist()}

    @classmethod
    def from_dict(cls, doc):
        try:
            k, m = len(doc["actions"]), len(doc["scenes"])
            return cls(doc["actions"], doc["scenes"],
                       np.reshape(doc["probabilities"], (k, m)), np.reshape(doc["counts"], (k, m)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed prior table: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read prior table {path}: {exc}") from exc
        return cls.from_dict(doc)


def _scene_label(scene):
    return scene.top_label if isinstance(scene, Distribution) else str(scene)


def learn_scene_prior(actions, scenes, action_vocabulary=None, scene_vocabulary=SCENES, literal=False):
    """Tally the top scene of every sample per action.

    ``scenes`` holds a scene label or ``Distribution`` per sample. With
    ``literal`` each row puts all mass on its most frequent scene (lowest
    index on ties).
    """
    actions = [str(a) for a in actions]
    labels = [_scene_label(s) for s in scenes]
    if len(actions) != len(labels):
        raise DataError(f"{len(actions)} action labels for {len(labels)} scene samples")
    action_vocabulary = tuple(action_vocabulary or sorted(set(actions)))
    scene_vocabulary = tuple(scene_vocabulary)
    counts = np.zeros((len(action_vocabulary), len(scene_vocabulary)), dtype=np.int64)
    for a, s in zip(actions, labels):
        if a not in action_vocabulary or s not in scene_vocabulary:
            raise DataError(f"sample ({a!r}, {s!r}) is outside the vocabulary")
        counts[action_vocabulary.index(a), scene_vocabulary.index(s)] += 1
    empty = [a for a, n in zip(action_vocabulary, counts.sum(axis=1)) if n == 0]
    if empty:
        raise DataError(f"no samples for action(s) {empty}")
    table = ScenePriorTable(action_vocabulary, scene_vocabulary,
                            counts / counts.sum(axis=1, keepdims=True), counts)
    return table.literal() if literal else table


class ScenePrior(BaseEstimator):
    """Estimator wrapper: ``fit(actions, scenes)`` learns ``table_``."""

    def __init__(self, scene_vocabulary=SCENES, action_vocabulary=None, literal=False):
        self.scene_vocabulary = scene_vocabulary
        self.action_vocabulary = action_vocabulary
        self.literal = literal

    def fit(self, actions, scenes):
        self.table_ = learn_scene_prior(actions, scenes, self.action_vocabulary,
                                        self.scene_vocabulary, self.literal)
        return self

    def predict_proba(self, actions):
        check_is_fitted(self, "table_")
        rows = [self.table_.actions.index(str(a)) for a in actions]
        return self.table_.probabilities[rows]


# ----------------------------------------------------------------- decision

def _check_probability(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DataError(f"{name} must lie in [0, 1], got {value}")
    return value


def posterior_action_given_scene(p_action, p_scene, p_scene_given_action):
    """Bayes posterior P(A | S); returns ``(raw, clamped)``."""
    p_action = _check_probability(p_action, "P(A)")
    p_scene = _check_probability(p_scene, "P(S)")
    p_sa = _check_probability(p_scene_given_action, "P(S|A)")
    if p_scene == 0.0:
        raise NumericalError("P(S) is zero; the posterior is undefined")
    raw = p_sa * p_action / p_scene
    return raw, min(max(raw, 0.0), 1.0)


@dataclass(frozen=True)
class AbnormalityDecision:
    action: str
    scene: str
    p_action: float
    p_scene: float
    p_scene_given_action: float
    p_action_given_scene_raw: float
    p_action_given_scene: float
    abd_index: float
    threshold: float
    abnormal: bool

    def to_dict(self):
        return asdict(self)


def abd_decision(p_action, p_action_given_scene, threshold=DEFAULT_THRESHOLD, *, action="", scene="",
                 p_scene=float("nan"), p_scene_given_action=float("nan"), raw=None):
    """``abd = P(A) - P(A|S)``; abnormal iff strictly above ``threshold``."""
    p_action = _check_probability(p_action, "P(A)")
    p_as = _check_probability(p_action_given_scene, "P(A|S)")
    abd = p_action - p_as
    return AbnormalityDecision(str(action), str(scene), p_action, float(p_scene),
                               float(p_scene_given_action), p_as if raw is None else float(raw),
                               p_as, abd, float(threshold), bool(abd > threshold))


class AbnormalityDetector(BaseEstimator):
    """Applies a learned prior to (action, scene) distribution pairs."""

    def __init__(self, threshold=DEFAULT_THRESHOLD, p_scene_mode="max"):
        self.threshold = threshold
        self.p_scene_mode = p_scene_mode

    def _p_scene(self, action_dist, scene_dist, prior):
        if self.p_scene_mode == "max":
            return scene_dist.top_probability
        if self.p_scene_mode == "marginal":
            scene = scene_dist.top_label
            return float(sum(p * prior.lookup(a, scene)
                             for a, p in zip(action_dist.labels, action_dist.probabilities)))
        raise DataError(f"unknown p_scene_mode {self.p_scene_mode!r}")

    def decide(self, action_dist, scene_dist, prior):
        action, scene = action_dist.top_label, scene_dist.top_label
        p_action = action_dist.top_probability
        p_sa = prior.lookup(action, scene)
        p_scene = self._p_scene(action_dist, scene_dist, prior)
        raw, clamped = posterior_action_given_scene(p_action, min(p_scene, 1.0), p_sa)
        return abd_decision(p_action, clamped, self.threshold, action=action, scene=scene,
                            p_scene=p_scene, p_scene_given_action=p_sa, raw=raw)


@dataclass(frozen=True)
class EvaluationReport:
    success_rate: float
    records: list

    def to_dict(self):
        return {"success_rate": self.success_rate, "records": self.records}


def evaluate_abnormality(decisions, truths, names=None):
    """Fraction of sequences whose abnormal flag matches the truth flag."""
    decisions, truths = list(decisions), [bool(t) for t in truths]
    if not decisions:
        raise DataError("cannot evaluate an empty suite")
    if len(decisions) != len(truths):
        raise DataError(f"{len(decisions)} decisions for {len(truths)} truth flags")
    names = names or [str(i) for i in range(len(decisions))]
    records = [{"sequence": n, "truth": t, "correct": d.abnormal == t, **d.to_dict()}
               for n, d, t in zip(names, decisions, truths)]
    return EvaluationReport(sum(r["correct"] for r in records) / len(records), records)
