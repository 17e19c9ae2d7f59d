"""Action probabilities from action-region crops.

The built-in model describes a crop with grid HOG (appearance) and grid MBH
(motion) and scores it with multinomial logistic regression. Anything else
(e.g. a deep network run elsewhere) plugs in through ``FileActionProvider``.
"""
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import imgops
from ._validation import check_distribution
from .exceptions import DataError, DimensionMismatchError, FormatError, ProviderError
from .features import HOG_BINS, MBH_BINS, _orientation_histogram
from .proposals import crop_and_resize, stack_flow_crops

GRID = 4
MODEL_MAGIC = b"ARLM"
MODEL_VERSION = 1
_BLOCK_EPS = 1e-12


@dataclass(frozen=True)
class Distribution:
    """Probability vector over a label vocabulary."""
    labels: tuple
    probabilities: np.ndarray

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        p = check_distribution(self.probabilities)
        if len(labels) != len(p):
            raise DataError(f"{len(labels)} labels for {len(p)} probabilities")
        if len(set(labels)) != len(labels):
            raise DataError("labels must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probabilities", p)

    @property
    def argmax(self):
        """Index of the most probable label (lowest index on ties)."""
        return int(np.argmax(self.probabilities))

    @property
    def top_label(self):
        return self.labels[self.argmax]

    @property
    def top_probability(self):
        return float(self.probabilities[self.argmax])

    def to_dict(self):
        return {"labels": list(self.labels), "probabilities": [float(p) for p in self.probabilities]}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(doc["labels"], doc["probabilities"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"distribution needs 'labels' and 'probabilities': {exc}") from exc

    @classmethod
    def mean(cls, dists):
        dists = list(dists)
        if not dists:
            raise DataError("no distributions to average")
        p = np.mean([d.probabilities for d in dists], axis=0)
        return cls(dists[0].labels, p / p.sum())


ActionDistribution = Distribution


def _grid_histogram(gx, gy, bins):
    """Per-cell orientation histograms on a GRID x GRID partition, (GRID, GRID, bins)."""
    votes = _orientation_histogram(gx, gy, bins)
    h, w = gx.shape
    ys = np.linspace(0, h, GRID + 1).astype(int)
    xs = np.linspace(0, w, GRID + 1).astype(int)
    out = np.zeros((GRID, GRID, bins))
    for i in range(GRID):
        for j in range(GRID):
            out[i, j] = votes[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].sum(axis=(0, 1))
    return out


def _normalize_blocks(blocks):
    norm = np.sqrt((blocks ** 2).sum(axis=-1, keepdims=True))
    return np.where(norm > _BLOCK_EPS, blocks / np.where(norm > _BLOCK_EPS, norm, 1.0), 0.0)


def grid_hog(crop):
    """4x4 cells x 8 bins, each cell L2-normalised, flattened (128,)."""
    gx, gy = imgops.central_gradient(imgops.to_gray(crop))
    return _normalize_blocks(_grid_histogram(gx, gy, HOG_BINS)).ravel()


def grid_mbh(flow_stack):
    """4x4 cells x (4 u-bins + 4 v-bins) summed over the L flows, flattened (128,)."""
    flow_stack = np.asarray(flow_stack, dtype=np.float64)
    if flow_stack.ndim != 3 or flow_stack.shape[2] % 2:
        raise DataError(f"flow stack must be (H, W, 2L), got {flow_stack.shape}")
    hist = np.zeros((GRID, GRID, 2 * MBH_BINS))
    for k in range(0, flow_stack.shape[2], 2):
        for f in range(2):
            gx, gy = imgops.central_gradient(flow_stack[:, :, k + f])
            hist[:, :, f * MBH_BINS:(f + 1) * MBH_BINS] += _grid_histogram(gx, gy, MBH_BINS)
    return _normalize_blocks(hist).ravel()


DESCRIPTOR_LENGTH = GRID * GRID * (HOG_BINS + 2 * MBH_BINS)


def describe_crop(spatial_crop, flow_stack):
    """Grid-HOG of the spatial crop followed by grid-MBH of the flow stack."""
    spatial_crop = np.asarray(spatial_crop, dtype=np.float64)
    flow_stack = np.asarray(flow_stack, dtype=np.float64)
    if spatial_crop.shape[:2] != flow_stack.shape[:2]:
        raise DimensionMismatchError(
            f"crop {spatial_crop.shape[:2]} and flow stack {flow_stack.shape[:2]} differ")
    return np.concatenate([grid_hog(spatial_crop), grid_mbh(flow_stack)])


def describe_region(frame, flows, box, L=1, side=224):
    return describe_crop(crop_and_resize(frame, box, side), stack_flow_crops(flows, box, L, side))


# ----------------------------------------------------------------- model

def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_gradient(W, b, X, Y, l2):
    """Mean cross-entropy plus ``l2 / 2 * ||W||^2``; Y is one-hot (N, K)."""
    P = softmax(X @ W.T + b)
    n = len(X)
    loss = -np.sum(Y * np.log(np.clip(P, 1e-300, None))) / n + 0.5 * l2 * np.sum(W * W)
    R = (P - Y) / n
    return loss, R.T @ X + l2 * W, R.sum(axis=0)


class LinearActionClassifier(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent.

    Each epoch takes one step of size ``learning_rate``, halved until the
    loss does not increase, so ``loss_history_`` is non-increasing.
    """

    def __init__(self, learning_rate=0.1, epochs=200, l2=1e-4, seed=0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) != len(y):
            raise DataError(f"expected X (N, D) matching y, got {X.shape} and {len(y)} labels")
        if not np.all(np.isfinite(X)):
            raise DataError("descriptors must be finite")
        self.classes_ = np.array(sorted(set(str(v) for v in y)))
        if len(self.classes_) < 2:
            raise DataError("training needs at least two action classes")
        idx = np.searchsorted(self.classes_, np.array([str(v) for v in y]))
        Y = np.eye(len(self.classes_))[idx]
        rng = np.random.default_rng(self.seed)
        W = 0.01 * rng.standard_normal((len(self.classes_), X.shape[1]))
        b = np.zeros(len(self.classes_))
        loss, gW, gb = loss_and_gradient(W, b, X, Y, self.l2)
        history = [loss]
        for _ in range(self.epochs):
            step = self.learning_rate
            for _ in range(40):
                W_new, b_new = W - step * gW, b - step * gb
                new_loss, new_gW, new_gb = loss_and_gradient(W_new, b_new, X, Y, self.l2)
                if new_loss <= loss:
                    break
                step *= 0.5
            else:
                break
            W, b, loss, gW, gb = W_new, b_new, new_loss, new_gW, new_gb
            history.append(loss)
        self.coef_, self.intercept_ = W, b
        self.loss_history_ = np.array(history)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(f"descriptor length {X.shape[1]}, model expects {self.n_features_in_}")
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def distribution(self, descriptor):
        return Distribution(tuple(self.classes_), self.predict_proba(descriptor)[0])

    def save(self, path):
        check_is_fitted(self, "coef_")
        labels = json.dumps({"labels": list(self.classes_), "params": self.get_params()}).encode()
        k, d = self.coef_.shape
        Path(path).write_bytes(
            MODEL_MAGIC + struct.pack("<IIII", MODEL_VERSION, k, d, len(labels)) + labels
            + self.coef_.astype("<f4").tobytes() + self.intercept_.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if buf[:4] != MODEL_MAGIC:
            raise FormatError(f"{path}: not an action model file")
        try:
            version, k, d, n = struct.unpack_from("<IIII", buf, 4)
            if version != MODEL_VERSION:
                raise FormatError(f"{path}: unsupported model version {version}")
            meta = json.loads(buf[20:20 + n])
            pos = 20 + n
            W = np.frombuffer(buf, "<f4", k * d, pos).reshape(k, d).astype(np.float64)
            b = np.frombuffer(buf, "<f4", k, pos + 4 * k * d).astype(np.float64)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated or corrupt model file") from exc
        model = cls(**meta["params"])
        model.classes_ = np.array(meta["labels"])
        model.coef_, model.intercept_ = W, b
        model.n_features_in_ = d
        return model


def train_classifier(descriptors, labels, learning_rate=0.1, epochs=200, l2=1e-4, seed=0):
    return LinearActionClassifier(learning_rate, epochs, l2, seed).fit(descriptors, labels)


def classify(descriptor, model):
    return model.distribution(descriptor)


# ----------------------------------------------------------------- providers

class LinearModelProvider:
    """Per-frame descriptors of the region, classified and averaged over frames."""

    def __init__(self, model, L=1, side=224):
        self.model = model
        self.L = L
        self.side = side

    def frame_descriptors(self, frames, boxes, flows):
        fwd = [f for f, _ in flows] if flows and isinstance(flows[0], tuple) else list(flows)
        n = len(fwd) - self.L + 1
        if n < 1:
            raise ProviderError(f"need at least {self.L} flow fields, got {len(fwd)}")
        return np.stack([describe_region(frames[t], fwd[t:t + self.L], boxes[t], self.L, self.side)
                         for t in range(n)])

    def action_probabilities(self, frames, boxes, flows):
        try:
            X = self.frame_descriptors(frames, boxes, flows)
            return Distribution.mean(self.model.distribution(x) for x in X)
        except (DataError, ValueError) as exc:
            raise ProviderError(f"built-in action model failed: {exc}") from exc


class FileActionProvider:
    """Distributions stored as JSON ``{"labels": [...], "probabilities": [...]}``."""

    def __init__(self, source):
        self.source = source

    def action_probabilities(self, frames=None, boxes=None, flows=None):
        return load_distribution(self.source)


def load_distribution(source):
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ProviderError(f"cannot read distribution {source}: {exc}") from exc
    try:
        return Distribution.from_dict(doc)
    except DataError as exc:
        raise ProviderError(f"invalid stored distribution: {exc}") from exc
