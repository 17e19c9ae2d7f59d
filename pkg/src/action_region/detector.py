"""Frames in, soft motion-boundary maps out.

``MotionBoundaryDetector`` chains flow estimation, the feature stack and the
structured forest behind one fit/transform estimator.
"""
from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .features import assemble_feature_stack
from .flow import FlowParams, estimate_flow_pair
from .forest import (BoundaryForest, ForestParams, PatchFeaturizer, PatchSamples,
                     extract_patch_samples)
from .exceptions import DataError


def pair_flows(frames, flow_params=None):
    """Forward and backward flow for every consecutive pair of ``frames``."""
    frames = np.asarray(frames)
    if len(frames) < 2:
        raise DataError("temporal operations need at least two frames")
    return [estimate_flow_pair(frames[t], frames[t + 1], flow_params) for t in range(len(frames) - 1)]


def pair_stacks(frames, flows):
    return [assemble_feature_stack(frames[t], frames[t + 1], fwd, bwd)
            for t, (fwd, bwd) in enumerate(flows)]


class MotionBoundaryDetector(TransformerMixin, BaseEstimator):
    """Soft motion-boundary map for each frame pair (t, t+1) of a sequence.

    ``fit(sequences, boundaries)`` takes a list of (T, H, W, 3) frame arrays
    and matching (T, H, W) truth masks; the mask of frame t labels the
    pair (t, t+1). ``transform(frames)`` returns T-1 maps.
    """

    def __init__(self, flow_params=None, forest_params=None, calibrate=True, tolerance=2):
        self.flow_params = flow_params
        self.forest_params = forest_params
        self.calibrate = calibrate
        self.tolerance = tolerance

    def _flow_params(self):
        return self.flow_params or FlowParams()

    def _forest_params(self):
        return self.forest_params or ForestParams()

    def featurize(self, frames, flows=None):
        flows = flows if flows is not None else pair_flows(frames, self._flow_params())
        return [PatchFeaturizer(s) for s in pair_stacks(frames, flows)]

    def fit(self, sequences, boundaries, featurizers=None):
        params = self._forest_params()
        rng = np.random.default_rng(params.rng_seed)
        if featurizers is None:
            featurizers = [self.featurize(frames) for frames in sequences]
        parts, truths = [], []
        for feats, masks in zip(featurizers, boundaries):
            for t, f in enumerate(feats):
                parts.append(extract_patch_samples(f, masks[t], params, rng))
                truths.append(np.asarray(masks[t], bool))
        samples = PatchSamples.concatenate(parts)
        self.forest_ = BoundaryForest(**asdict(params)).fit(samples.features, samples.masks)
        if self.calibrate:
            maps = [self.forest_.predict_map(f) for feats in featurizers for f in feats]
            self.train_f_measure_ = self.forest_.calibrate_threshold(maps, truths, self.tolerance)
        return self

    def transform(self, frames, flows=None):
        check_is_fitted(self, "forest_")
        return [self.forest_.predict_map(f) for f in self.featurize(frames, flows)]

    @classmethod
    def from_forest(cls, forest, flow_params=None):
        det = cls(flow_params=flow_params, forest_params=forest.params)
        det.forest_ = forest
        return det
