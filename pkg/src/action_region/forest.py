"""Structured random forest mapping feature-stack patches to boundary masks.

Each sample is a 32x32 patch of the 33-channel feature stack around a
centre pixel. Its features are

* the patch downsampled 2x (2x2 means) -> 16 x 16 values per channel, and
* pairwise differences between the means of a 4 x 4 grid of 8x8 cells
  -> 120 values per channel.

Its label is the 16x16 binary boundary mask centred on the same pixel.
Trees are grown on bootstrap samples; at each node the structured labels are
reduced to two pseudo-classes (random pixel-pair difference vectors, projected
on their top principal direction, split at the median) and the split is
chosen by Gini impurity. Leaves store the mean mask of the samples reaching
them; prediction averages leaf masks over trees and overlapping patches.

Forest file layout (little endian)::

    b"ARSF"                      magic
    uint32 version (=1)
    uint32 json_len, json_len bytes of UTF-8 JSON with the hyperparameters,
           feature count, mask size and decision threshold
    uint32 n_trees
    per tree:
        uint32 n_nodes, uint32 n_leaves
        int32[n_nodes]   feature (-1 for leaves)
        float32[n_nodes] threshold
        int32[n_nodes]   left child
        int32[n_nodes]   right child
        int32[n_nodes]   leaf index (-1 for internal nodes)
        float32[n_leaves * 16 * 16] leaf masks
"""
import json
import struct
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError, DimensionMismatchError, FormatError

PATCH = 32
MASK = 16
DOWNSAMPLE = 2
CELL = 8
_GRID = PATCH // CELL
_PAIRS = np.array(list(combinations(range(_GRID * _GRID), 2)))
FOREST_MAGIC = b"ARSF"
FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 8
    max_depth: int = 16
    min_samples_leaf: int = 8
    features_per_split: int = None      # None -> sqrt(feature count)
    pixel_pairs_for_projection: int = 256
    stride: int = 2                     # prediction grid
    sample_stride: int = 8              # training grid
    negatives_per_positive: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("tree_count", "max_depth", "min_samples_leaf",
                     "pixel_pairs_for_projection", "stride", "sample_stride"):
            if getattr(self, name) < 1:
                raise DataError(f"ForestParams.{name} must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise DataError("ForestParams.features_per_split must be >= 1")


def feature_count(n_channels):
    per_raw = (PATCH // DOWNSAMPLE) ** 2
    return n_channels * (per_raw + len(_PAIRS))


def _feature_table(n_channels):
    """Per-feature (kind, channel, dy1, dx1, dy2, dx2) offsets into the padded maps."""
    side = PATCH // DOWNSAMPLE
    c, i, j = np.meshgrid(np.arange(n_channels), np.arange(side), np.arange(side), indexing="ij")
    raw = np.stack([np.zeros(c.size, int), c.ravel(), DOWNSAMPLE * i.ravel(),
                    DOWNSAMPLE * j.ravel(), np.zeros(c.size, int), np.zeros(c.size, int)], axis=1)
    cc, pp = np.meshgrid(np.arange(n_channels), np.arange(len(_PAIRS)), indexing="ij")
    p1, p2 = _PAIRS[pp.ravel(), 0], _PAIRS[pp.ravel(), 1]
    pair = np.stack([np.ones(cc.size, int), cc.ravel(),
                     CELL * (p1 // _GRID), CELL * (p1 % _GRID),
                     CELL * (p2 // _GRID), CELL * (p2 % _GRID)], axis=1)
    return np.concatenate([raw, pair]).astype(np.intp)


class PatchFeaturizer:
    """Computes patch features of one feature stack at arbitrary centres."""

    def __init__(self, stack):
        data = stack.combined.data if hasattr(stack, "combined") else np.asarray(stack)
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3:
            raise DataError("feature stack must be (H, W, C)")
        self.shape = data.shape[:2]
        self.n_channels = data.shape[2]
        half = PATCH // 2
        z = np.pad(data, ((half, half + CELL), (half, half + CELL), (0, 0)), mode="edge")
        self._down = 0.25 * (z[:-1, :-1] + z[1:, :-1] + z[:-1, 1:] + z[1:, 1:])
        csum = np.pad(z.cumsum(0).cumsum(1), ((1, 0), (1, 0), (0, 0)))
        self._cells = (csum[CELL:, CELL:] - csum[:-CELL, CELL:]
                       - csum[CELL:, :-CELL] + csum[:-CELL, :-CELL]) / CELL ** 2
        self.table = _feature_table(self.n_channels)

    @property
    def n_features(self):
        return len(self.table)

    def values(self, cy, cx, features):
        """Feature values with shape broadcast(cy, features)."""
        t = self.table[features]
        kind, ch = t[..., 0], t[..., 1]
        y1, x1 = cy + t[..., 2], cx + t[..., 3]
        out = np.where(kind == 0, self._down[y1, x1, ch], self._cells[y1, x1, ch])
        pair = kind == 1
        if np.any(pair):
            y2, x2 = cy + t[..., 4], cx + t[..., 5]
            out = out - np.where(pair, self._cells[y2, x2, ch], 0.0)
        return out.astype(np.float32)

    def matrix(self, cy, cx):
        cy = np.asarray(cy)[:, None]
        cx = np.asarray(cx)[:, None]
        feats = np.arange(self.n_features)[None, :]
        rows = [self.values(cy[k:k + 256], cx[k:k + 256], feats) for k in range(0, len(cy), 256)]
        return np.concatenate(rows) if rows else np.zeros((0, self.n_features), np.float32)


def grid_centres(shape, stride):
    h, w = shape
    ys, xs = np.meshgrid(np.arange(0, h, stride), np.arange(0, w, stride), indexing="ij")
    return ys.ravel(), xs.ravel()


def label_masks(truth, cy, cx):
    """16x16 masks centred on each centre (rows cy-8 .. cy+7), clamped at borders."""
    truth = np.asarray(truth)
    h, w = truth.shape
    off = np.arange(MASK) - MASK // 2
    ys = np.clip(cy[:, None] + off[None, :], 0, h - 1)
    xs = np.clip(cx[:, None] + off[None, :], 0, w - 1)
    return truth[ys[:, :, None], xs[:, None, :]].astype(np.uint8)


@dataclass
class PatchSamples:
    """Training samples: ``features`` (N, F) float32, ``masks`` (N, 16, 16) uint8."""
    features: np.ndarray
    masks: np.ndarray
    centres: np.ndarray = None

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, k):
        return self.features[k], self.masks[k]

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        if not parts:
            raise DataError("no sample sets to concatenate")
        return cls(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.masks for p in parts]))


def extract_patch_samples(stack, truth_boundary, params=None, rng=None):
    """Grid samples from one feature stack with positives making up >= 25%.

    Every grid position whose label mask contains a boundary pixel is kept;
    negatives are subsampled to at most ``negatives_per_positive`` per
    positive. With no positives at all every negative is kept.
    """
    params = params or ForestParams()
    featurizer = stack if isinstance(stack, PatchFeaturizer) else PatchFeaturizer(stack)
    truth = np.asarray(truth_boundary).astype(bool)
    if truth.shape != featurizer.shape:
        raise DimensionMismatchError(f"truth {truth.shape} vs stack {featurizer.shape}")
    cy, cx = grid_centres(featurizer.shape, params.sample_stride)
    masks = label_masks(truth, cy, cx)
    positive = masks.reshape(len(masks), -1).any(axis=1)
    n_pos = int(positive.sum())
    keep = np.ones(len(cy), bool)
    if n_pos:
        neg = np.flatnonzero(~positive)
        limit = params.negatives_per_positive * n_pos
        if len(neg) > limit:
            rng = rng if rng is not None else np.random.default_rng(params.rng_seed)
            drop = rng.choice(neg, size=len(neg) - limit, replace=False)
            keep[drop] = False
    cy, cx = cy[keep], cx[keep]
    return PatchSamples(featurizer.matrix(cy, cx), masks[keep], np.stack([cy, cx], axis=1))


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "leaf", "leaf_masks")

    def __init__(self, feature, threshold, left, right, leaf, leaf_masks):
        self.feature = np.asarray(feature, np.int32)
        self.threshold = np.asarray(threshold, np.float32)
        self.left = np.asarray(left, np.int32)
        self.right = np.asarray(right, np.int32)
        self.leaf = np.asarray(leaf, np.int32)
        self.leaf_masks = np.asarray(leaf_masks, np.float32)

    def apply(self, value_fn, n):
        """Leaf index for each of ``n`` samples; ``value_fn(rows, features)``."""
        node = np.zeros(n, np.intp)
        active = np.flatnonzero(self.leaf[node] < 0)
        while active.size:
            nd = node[active]
            vals = value_fn(active, self.feature[nd])
            go_left = vals <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.leaf[node[active]] < 0]
        return self.leaf[node]

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.__slots__)


def _pseudo_labels(masks, rng, n_pairs):
    flat = masks.reshape(len(masks), -1).astype(np.float64)
    p1 = rng.integers(0, flat.shape[1], n_pairs)
    p2 = rng.integers(0, flat.shape[1], n_pairs)
    z = (flat[:, p1] != flat[:, p2]).astype(np.float64)
    z -= z.mean(axis=0)
    if np.any(z):
        cov = z.T @ z
        _, vecs = np.linalg.eigh(cov)
        proj = z @ vecs[:, -1]
    else:
        proj = flat.sum(axis=1)
    labels = _median_split(proj)
    if labels.all() or not labels.any():
        labels = _median_split(flat.sum(axis=1))
    return labels


def _median_split(proj):
    # ties at the median go to whichever side leaves both sides non-empty
    med = np.median(proj)
    labels = proj > med
    if not labels.any():
        labels = proj >= med
    return labels


def _best_split(x, labels, feats, rng, min_leaf, n_thresholds=16):
    """Lowest-Gini (feature, threshold); ties -> lowest feature, then threshold."""
    n = len(labels)
    vals = x[:, feats]
    pick = rng.choice(n, size=min(n, n_thresholds), replace=False)
    cand = np.sort(vals[pick], axis=0)
    thr = 0.5 * (cand[1:] + cand[:-1])                          # (t, f)
    left = vals[:, None, :] <= thr[None, :, :]                  # (n, t, f)
    n_left = left.sum(axis=0).astype(np.float64)
    pos_left = (left & labels[:, None, None]).sum(axis=0).astype(np.float64)
    n_right = n - n_left
    pos_right = labels.sum() - pos_left

    def gini(pos, cnt):
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(cnt > 0, pos / np.where(cnt > 0, cnt, 1), 0.0)
        return 2 * p * (1 - p)

    score = (n_left * gini(pos_left, n_left) + n_right * gini(pos_right, n_right)) / n
    valid = (n_left >= min_leaf) & (n_right >= min_leaf)
    score = np.where(valid, score, np.inf)
    if not np.isfinite(score).any():
        return None
    best = score.min()
    ti, fi = np.nonzero(score == best)
    order = np.lexsort((thr[ti, fi], feats[fi]))
    k = order[0]
    return int(feats[fi[k]]), np.float32(thr[ti[k], fi[k]])


def _grow_tree(x, masks, params, n_split, rng):
    feature, threshold, left, right, leaf, leaf_masks = [], [], [], [], [], []

    def new_node():
        for arr, val in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (leaf, -1)):
            arr.append(val)
        return len(feature) - 1

    def make_leaf(node, idx):
        leaf[node] = len(leaf_masks)
        leaf_masks.append(masks[idx].mean(axis=0))

    root = new_node()
    stack = [(root, np.arange(len(masks)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        m = masks[idx]
        if (depth >= params.max_depth or len(idx) < 2 * params.min_samples_leaf
                or np.all(m == m[0])):
            make_leaf(node, idx)
            continue
        labels = _pseudo_labels(m, rng, params.pixel_pairs_for_projection)
        feats = np.sort(rng.choice(x.shape[1], size=min(n_split, x.shape[1]), replace=False))
        split = _best_split(x[idx], labels, feats, rng, params.min_samples_leaf)
        if split is None:
            make_leaf(node, idx)
            continue
        f, t = split
        go_left = x[idx, f] <= t
        feature[node], threshold[node] = f, t
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~go_left], depth + 1))
        stack.append((left[node], idx[go_left], depth + 1))
    return _Tree(feature, threshold, left, right, leaf, np.stack(leaf_masks))


class BoundaryForest(BaseEstimator):
    """Structured random forest predicting 16x16 boundary masks.

    ``fit(X, Y)`` takes patch features (N, F) and masks (N, 16, 16);
    ``predict(X)`` returns mean soft masks; ``predict_map(stack)`` produces
    a soft boundary map for a whole feature stack.
    """

    def __init__(self, tree_count=8, max_depth=16, min_samples_leaf=8, features_per_split=None,
                 pixel_pairs_for_projection=256, stride=2, sample_stride=8,
                 negatives_per_positive=3, rng_seed=0):
        self.tree_count = tree_count
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.features_per_split = features_per_split
        self.pixel_pairs_for_projection = pixel_pairs_for_projection
        self.stride = stride
        self.sample_stride = sample_stride
        self.negatives_per_positive = negatives_per_positive
        self.rng_seed = rng_seed

    @property
    def params(self):
        return ForestParams(**self.get_params())

    def fit(self, X, Y):
        X = np.asarray(X, dtype=np.float32)
        Y = np.asarray(Y)
        if X.ndim != 2 or len(X) != len(Y) or Y.shape[1:] != (MASK, MASK):
            raise DataError(f"expected X (N, F) and Y (N, {MASK}, {MASK}), got {X.shape}, {Y.shape}")
        if len(X) < 1:
            raise DataError("no training samples")
        if not np.all(np.isfinite(X)):
            raise DataError("training features must be finite")
        params = self.params
        n_split = params.features_per_split or max(1, int(round(np.sqrt(X.shape[1]))))
        seeds = np.random.SeedSequence(params.rng_seed).spawn(params.tree_count)
        masks = Y.astype(np.float64)
        self.trees_ = []
        for seq in seeds:
            rng = np.random.default_rng(seq)
            boot = rng.integers(0, len(X), len(X))
            self.trees_.append(_grow_tree(X[boot], masks[boot], params, n_split, rng))
        self.n_features_in_ = X.shape[1]
        self.threshold_ = 0.5
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(f"expected {self.n_features_in_} features, got {X.shape}")
        out = np.zeros((len(X), MASK, MASK))
        for tree in self.trees_:
            leaves = tree.apply(lambda rows, f: X[rows, f], len(X))
            out += tree.leaf_masks[leaves]
        return out / len(self.trees_)

    def predict_map(self, stack):
        """Soft boundary map in [0, 1] for a feature stack."""
        check_is_fitted(self, "trees_")
        featurizer = stack if isinstance(stack, PatchFeaturizer) else PatchFeaturizer(stack)
        if featurizer.n_features != self.n_features_in_:
            raise DimensionMismatchError(
                f"stack yields {featurizer.n_features} features, forest expects {self.n_features_in_}")
        h, w = featurizer.shape
        cy, cx = grid_centres((h, w), self.stride)
        acc = np.zeros((h + MASK, w + MASK))
        cnt = np.zeros((h + MASK, w + MASK))
        half = MASK // 2
        masks = np.zeros((len(cy), MASK, MASK))
        for tree in self.trees_:
            leaves = tree.apply(lambda rows, f: featurizer.values(cy[rows], cx[rows], f), len(cy))
            masks += tree.leaf_masks[leaves]
        masks /= len(self.trees_)
        # accumulate into a padded canvas; patch-local pixel (dy, dx) of every
        # centre lands on a distinct canvas pixel, so plain fancy-add is safe
        for dy in range(MASK):
            for dx in range(MASK):
                ys, xs = cy + dy, cx + dx
                acc[ys, xs] += masks[:, dy, dx]
                cnt[ys, xs] += 1.0
        acc, cnt = acc[half:half + h, half:half + w], cnt[half:half + h, half:half + w]
        return np.clip(acc / np.maximum(cnt, 1.0), 0.0, 1.0)

    def calibrate_threshold(self, maps, truths, tolerance=2, candidates=None):
        """Pick the binarisation threshold maximising boundary F-measure."""
        from .metrics import boundary_f_measure
        candidates = np.linspace(0.05, 0.95, 19) if candidates is None else candidates
        best, best_f = 0.5, -1.0
        for t in candidates:
            f = boundary_f_measure([m >= t for m in maps], truths, tolerance)["f"]
            if f > best_f + 1e-12:
                best, best_f = float(t), f
        self.threshold_ = best
        return best_f

    def binarize(self, boundary_map):
        return np.asarray(boundary_map) >= getattr(self, "threshold_", 0.5)

    # -------------------------------------------------------------- files

    def save(self, path):
        check_is_fitted(self, "trees_")
        meta = json.dumps({"params": self.get_params(), "n_features": int(self.n_features_in_),
                           "mask": MASK, "threshold": float(self.threshold_)},
                          sort_keys=True).encode()
        parts = [FOREST_MAGIC, struct.pack("<II", FOREST_VERSION, len(meta)), meta,
                 struct.pack("<I", len(self.trees_))]
        for tree in self.trees_:
            parts.append(struct.pack("<II", len(tree.feature), len(tree.leaf_masks)))
            parts += [tree.feature.astype("<i4").tobytes(), tree.threshold.astype("<f4").tobytes(),
                      tree.left.astype("<i4").tobytes(), tree.right.astype("<i4").tobytes(),
                      tree.leaf.astype("<i4").tobytes(), tree.leaf_masks.astype("<f4").tobytes()]
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if buf[:4] != FOREST_MAGIC:
            raise FormatError(f"{path}: not a forest file")
        try:
            version, meta_len = struct.unpack_from("<II", buf, 4)
            if version != FOREST_VERSION:
                raise FormatError(f"{path}: unsupported forest version {version}")
            pos = 12
            meta = json.loads(buf[pos:pos + meta_len])
            pos += meta_len
            (n_trees,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            trees = []
            for _ in range(n_trees):
                n_nodes, n_leaves = struct.unpack_from("<II", buf, pos)
                pos += 8
                arrays = []
                for dtype in ("<i4", "<f4", "<i4", "<i4", "<i4"):
                    arrays.append(np.frombuffer(buf, dtype, n_nodes, pos))
                    pos += 4 * n_nodes
                leaf_masks = np.frombuffer(buf, "<f4", n_leaves * MASK * MASK, pos)
                pos += 4 * n_leaves * MASK * MASK
                trees.append(_Tree(*arrays, leaf_masks.reshape(n_leaves, MASK, MASK)))
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated or corrupt forest file") from exc
        forest = cls(**meta["params"])
        forest.trees_ = trees
        forest.n_features_in_ = meta["n_features"]
        forest.threshold_ = meta["threshold"]
        return forest


def train_forest(samples, params=None):
    params = params or ForestParams()
    return BoundaryForest(**asdict(params)).fit(samples.features, samples.masks)


def predict_boundary(stack, forest):
    return forest.predict_map(stack)
