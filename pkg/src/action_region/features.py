"""Per-pixel spatial and temporal cues for motion-boundary prediction.

The combined stack has 33 channels in a frozen order (see ``SPATIAL_NAMES``
and ``TEMPORAL_NAMES``); the boundary forest indexes features by position,
so the order must not change.
"""
from dataclasses import dataclass

import numpy as np

from . import imgops
from ._validation import check_flow, check_frame, check_same_size
from .exceptions import DataError

ORIENTATIONS = (0, 45, 90, 135)
HOG_BINS = 8
MBH_BINS = 4
WINDOW_RADIUS = 2  # 5x5 accumulation window for HOG and MBH

SPATIAL_NAMES = (
    ("R", "G", "B", "grad_norm_fine", "grad_norm_coarse")
    + tuple(f"grad_{a}_fine" for a in ORIENTATIONS)
    + tuple(f"grad_{a}_coarse" for a in ORIENTATIONS)
)
TEMPORAL_NAMES = (
    ("fwd_u", "fwd_v", "bwd_u", "bwd_v", "fwd_flow_grad", "bwd_flow_grad")
    + tuple(f"fwd_flow_grad_{a}_coarse" for a in ORIENTATIONS)
    + ("warp_error_fwd", "warp_error_bwd")
    + tuple(f"mbh_{f}_{b}" for f in ("u", "v") for b in range(MBH_BINS))
)


@dataclass(frozen=True)
class ChannelMap:
    """Named per-pixel channels, stored as an (H, W, C) array."""
    names: tuple
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        names = tuple(self.names)
        if data.ndim != 3 or data.shape[2] != len(names):
            raise DataError(f"{len(names)} names for data of shape {data.shape}")
        if len(set(names)) != len(names):
            raise DataError("channel names must be unique")
        if not np.all(np.isfinite(data)):
            raise DataError("channel data must be finite")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "data", data)

    @property
    def channel_count(self):
        return len(self.names)

    @property
    def shape(self):
        return self.data.shape[:2]

    def __getitem__(self, name):
        if name not in self.names:
            raise DataError(f"unknown channel {name!r}")
        return self.data[:, :, self.names.index(name)]


@dataclass(frozen=True)
class FeatureStack:
    spatial: ChannelMap
    temporal: ChannelMap

    @property
    def combined(self):
        return ChannelMap(self.spatial.names + self.temporal.names,
                          np.concatenate([self.spatial.data, self.temporal.data], axis=2))

    @property
    def shape(self):
        return self.spatial.shape


def _oriented(gx, gy):
    """Absolute projection of the gradient on each of the four orientations."""
    return [np.abs(gx * np.cos(np.deg2rad(a)) + gy * np.sin(np.deg2rad(a))) for a in ORIENTATIONS]


def _grad_cues(gray):
    gx, gy = imgops.central_gradient(gray)
    return (np.hypot(gx, gy), *_oriented(gx, gy))


def spatial_cues(frame):
    """RGB, gradient norm and four oriented gradients at fine and coarse scale."""
    frame = check_frame(frame, channels=3)
    gray = imgops.to_gray(frame)
    fine = _grad_cues(gray)
    coarse = imgops.at_coarse_scale(_grad_cues, gray)
    channels = [frame[:, :, 0], frame[:, :, 1], frame[:, :, 2], fine[0], coarse[0],
                *fine[1:], *coarse[1:]]
    return ChannelMap(SPATIAL_NAMES, np.stack(channels, axis=2))


def _flow_oriented(flow):
    gux, guy = imgops.central_gradient(flow[:, :, 0])
    gvx, gvy = imgops.central_gradient(flow[:, :, 1])
    mu, mv = np.hypot(gux, guy), np.hypot(gvx, gvy)
    total = mu + mv
    safe = np.where(total > 0, total, 1.0)
    return tuple(np.where(total > 0, (mu * pu + mv * pv) / safe, 0.0)
                 for pu, pv in zip(_oriented(gux, guy), _oriented(gvx, gvy)))


def flow_gradient_magnitude(flow):
    """sqrt(|grad u|^2 + |grad v|^2) per pixel."""
    gux, guy = imgops.central_gradient(flow[:, :, 0])
    gvx, gvy = imgops.central_gradient(flow[:, :, 1])
    return np.sqrt(gux ** 2 + guy ** 2 + gvx ** 2 + gvy ** 2)


def flow_gradient_cues(flow):
    """Unoriented flow-gradient magnitude plus four coarse oriented maps.

    Each oriented map is the magnitude-weighted average of the u and v
    gradients projected onto that orientation.
    """
    flow = check_flow(flow)
    names = ("flow_grad",) + tuple(f"flow_grad_{a}_coarse" for a in ORIENTATIONS)
    channels = [flow_gradient_magnitude(flow), *imgops.at_coarse_scale(_flow_oriented, flow)]
    return ChannelMap(names, np.stack(channels, axis=2))


def _orientation_histogram(gx, gy, bins):
    """Hard-binned, magnitude-weighted unsigned orientation votes, (H, W, bins)."""
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((theta / (np.pi / bins)).astype(np.intp), bins - 1)
    votes = np.zeros(gx.shape + (bins,))
    np.put_along_axis(votes, idx[..., None], mag[..., None], axis=2)
    return votes


def hog_map(frame):
    """8-bin pixel-wise HOG, each pixel's histogram normalised to unit L2 norm."""
    frame = check_frame(frame)
    if min(frame.shape[:2]) < 3:
        raise DataError("hog_map needs at least a 3x3 frame")
    gx, gy = imgops.central_gradient(imgops.to_gray(frame))
    hist = imgops.box_sum(_orientation_histogram(gx, gy, HOG_BINS), WINDOW_RADIUS)
    norm = np.sqrt((hist ** 2).sum(axis=2, keepdims=True))
    return np.where(norm > 0, hist / np.where(norm > 0, norm, 1.0), 0.0)


def warp_error(d_t, d_t1, flow):
    """||D_t(p) - D_t1(p + W(p))||_2 with per-bin bilinear sampling."""
    flow = check_flow(flow)
    check_same_size(d_t, d_t1, flow, names=["d_t", "d_t1", "flow"])
    sampled = imgops.warp(np.asarray(d_t1, dtype=np.float64), flow)
    return np.sqrt(((np.asarray(d_t, dtype=np.float64) - sampled) ** 2).sum(axis=2))


def mbh(flow):
    """Motion boundary histograms: 4 orientation bins for each of u and v.

    Constant flow offsets cancel in the derivatives, so the result ignores
    uniform (camera) translation.
    """
    flow = check_flow(flow)
    channels = []
    for k in range(2):
        gx, gy = imgops.central_gradient(flow[:, :, k])
        channels.append(imgops.box_sum(_orientation_histogram(gx, gy, MBH_BINS), WINDOW_RADIUS))
    names = tuple(f"mbh_{f}_{b}" for f in ("u", "v") for b in range(MBH_BINS))
    return ChannelMap(names, np.concatenate(channels, axis=2))


def temporal_cues(frame_t, frame_t1, fwd, bwd, hog_t=None, hog_t1=None):
    fwd, bwd = check_flow(fwd, "forward flow"), check_flow(bwd, "backward flow")
    hog_t = hog_map(frame_t) if hog_t is None else hog_t
    hog_t1 = hog_map(frame_t1) if hog_t1 is None else hog_t1
    fwd_grad = flow_gradient_cues(fwd)
    channels = [
        fwd[:, :, 0], fwd[:, :, 1], bwd[:, :, 0], bwd[:, :, 1],
        fwd_grad.data[:, :, 0], flow_gradient_magnitude(bwd),
        *np.moveaxis(fwd_grad.data[:, :, 1:], 2, 0),
        warp_error(hog_t, hog_t1, fwd), warp_error(hog_t1, hog_t, bwd),
        *np.moveaxis(mbh(fwd).data, 2, 0),
    ]
    return ChannelMap(TEMPORAL_NAMES, np.stack(channels, axis=2))


def assemble_feature_stack(frame_t, frame_t1, fwd, bwd):
    """All 33 cues for the frame pair (t, t+1) and its forward/backward flow."""
    frame_t = check_frame(frame_t, channels=3, name="frame_t")
    frame_t1 = check_frame(frame_t1, channels=3, name="frame_t1")
    check_same_size(frame_t, frame_t1, fwd, bwd,
                    names=["frame_t", "frame_t1", "forward flow", "backward flow"])
    return FeatureStack(spatial_cues(frame_t), temporal_cues(frame_t, frame_t1, fwd, bwd))
