"""Coarse-to-fine variational optical flow.

Energy: Charbonnier-penalised brightness constancy plus Charbonnier
first-order smoothness on each flow component and direction. Each pyramid
level runs several warping steps; each warping step linearises the data term
around the current flow and solves for the increment by lagged-weight
fixed-point iteration (IRLS). The flow is median filtered after every
warping step.
"""
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from scipy.ndimage import gaussian_filter, median_filter

from . import imgops
from ._validation import check_flow, check_frame, check_same_size
from .exceptions import DataError, DimensionMismatchError

# intensity scale of the solver; regularization_weight is relative to it
_INTENSITY_SCALE = 255.0
_EPS_DATA = 1e-3 * _INTENSITY_SCALE
_EPS_SMOOTH = 1e-3
_MIN_LEVEL_SIZE = 8
_SOR_ITERATIONS = 5
_SOR_OMEGA = 1.8


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 5
    scale_factor: float = 0.5
    regularization_weight: float = 10.0
    warp_iterations: int = 5
    fixed_point_iterations: int = 10
    median_filter_radius: int = 2
    color: bool = False

    def __post_init__(self):
        for name in ("pyramid_levels", "warp_iterations", "fixed_point_iterations"):
            if getattr(self, name) < 1:
                raise DataError(f"FlowParams.{name} must be >= 1")
        if not 0.0 < self.scale_factor < 1.0:
            raise DataError("FlowParams.scale_factor must lie in (0, 1)")
        if self.regularization_weight < 0:
            raise DataError("FlowParams.regularization_weight must be >= 0")
        if self.median_filter_radius < 0:
            raise DataError("FlowParams.median_filter_radius must be >= 0")

    def to_dict(self):
        return asdict(self)


def _level_shapes(h, w, params):
    shapes = [(h, w)]
    for _ in range(params.pyramid_levels - 1):
        ph, pw = shapes[-1]
        nh, nw = int(round(ph * params.scale_factor)), int(round(pw * params.scale_factor))
        if min(nh, nw) < _MIN_LEVEL_SIZE:
            break
        shapes.append((nh, nw))
    return shapes


def _pyramid(img, shapes, params):
    sigma = 1.0 / np.sqrt(2.0 * params.scale_factor)
    levels = [img]
    for nh, nw in shapes[1:]:
        prev = levels[-1]
        axes_sigma = (sigma, sigma) + (0,) * (prev.ndim - 2)
        levels.append(imgops.resize_bilinear(
            gaussian_filter(prev, axes_sigma, mode="nearest"), nh, nw))
    return levels


@njit(cache=True)
def _irls_increment(ix, iy, it, u, v, lam, fp_iters, sor_iters, omega, eps_d, eps_s):
    """Lagged-weight fixed-point solve for the flow increment (du, dv).

    ix, iy, it carry a trailing channel axis. Inner linear systems are
    relaxed with Gauss-Seidel SOR, rows in raster order.
    """
    h, w, nc = ix.shape
    du = np.zeros((h, w))
    dv = np.zeros((h, w))
    a11 = np.empty((h, w))
    a12 = np.empty((h, w))
    a22 = np.empty((h, w))
    b1 = np.empty((h, w))
    b2 = np.empty((h, w))
    wxu = np.zeros((h, w))
    wyu = np.zeros((h, w))
    wxv = np.zeros((h, w))
    wyv = np.zeros((h, w))
    for _ in range(fp_iters):
        for i in range(h):
            for j in range(w):
                s11 = 0.0
                s12 = 0.0
                s22 = 0.0
                t1 = 0.0
                t2 = 0.0
                for c in range(nc):
                    gx = ix[i, j, c]
                    gy = iy[i, j, c]
                    gt = it[i, j, c]
                    r = gt + gx * du[i, j] + gy * dv[i, j]
                    psi = 1.0 / np.sqrt(r * r + eps_d * eps_d)
                    s11 += psi * gx * gx
                    s12 += psi * gx * gy
                    s22 += psi * gy * gy
                    t1 -= psi * gx * gt
                    t2 -= psi * gy * gt
                a11[i, j] = s11
                a12[i, j] = s12
                a22[i, j] = s22
                b1[i, j] = t1
                b2[i, j] = t2
                if j + 1 < w:
                    d = u[i, j + 1] + du[i, j + 1] - u[i, j] - du[i, j]
                    wxu[i, j] = 1.0 / np.sqrt(d * d + eps_s * eps_s)
                    d = v[i, j + 1] + dv[i, j + 1] - v[i, j] - dv[i, j]
                    wxv[i, j] = 1.0 / np.sqrt(d * d + eps_s * eps_s)
                if i + 1 < h:
                    d = u[i + 1, j] + du[i + 1, j] - u[i, j] - du[i, j]
                    wyu[i, j] = 1.0 / np.sqrt(d * d + eps_s * eps_s)
                    d = v[i + 1, j] + dv[i + 1, j] - v[i, j] - dv[i, j]
                    wyv[i, j] = 1.0 / np.sqrt(d * d + eps_s * eps_s)
        for _ in range(sor_iters):
            for i in range(h):
                for j in range(w):
                    su = 0.0
                    nu = 0.0
                    sv = 0.0
                    nv = 0.0
                    if j > 0:
                        su += wxu[i, j - 1] * (u[i, j - 1] + du[i, j - 1] - u[i, j])
                        nu += wxu[i, j - 1]
                        sv += wxv[i, j - 1] * (v[i, j - 1] + dv[i, j - 1] - v[i, j])
                        nv += wxv[i, j - 1]
                    if j + 1 < w:
                        su += wxu[i, j] * (u[i, j + 1] + du[i, j + 1] - u[i, j])
                        nu += wxu[i, j]
                        sv += wxv[i, j] * (v[i, j + 1] + dv[i, j + 1] - v[i, j])
                        nv += wxv[i, j]
                    if i > 0:
                        su += wyu[i - 1, j] * (u[i - 1, j] + du[i - 1, j] - u[i, j])
                        nu += wyu[i - 1, j]
                        sv += wyv[i - 1, j] * (v[i - 1, j] + dv[i - 1, j] - v[i, j])
                        nv += wyv[i - 1, j]
                    if i + 1 < h:
                        su += wyu[i, j] * (u[i + 1, j] + du[i + 1, j] - u[i, j])
                        nu += wyu[i, j]
                        sv += wyv[i, j] * (v[i + 1, j] + dv[i + 1, j] - v[i, j])
                        nv += wyv[i, j]
                    den = a11[i, j] + lam * nu
                    if den > 0.0:
                        new = (b1[i, j] - a12[i, j] * dv[i, j] + lam * su) / den
                        du[i, j] = (1.0 - omega) * du[i, j] + omega * new
                    den = a22[i, j] + lam * nv
                    if den > 0.0:
                        new = (b2[i, j] - a12[i, j] * du[i, j] + lam * sv) / den
                        dv[i, j] = (1.0 - omega) * dv[i, j] + omega * new
    return du, dv


def _solve_level(i0, i1, flow, params):
    gx0, gy0 = imgops.central_gradient(i0)
    gx1, gy1 = imgops.central_gradient(i1)
    for _ in range(params.warp_iterations):
        ix = 0.5 * (imgops.warp(gx1, flow) + gx0)
        iy = 0.5 * (imgops.warp(gy1, flow) + gy0)
        it = imgops.warp(i1, flow) - i0
        if i0.ndim == 2:
            ix, iy, it = ix[..., None], iy[..., None], it[..., None]
        du, dv = _irls_increment(
            np.ascontiguousarray(ix), np.ascontiguousarray(iy), np.ascontiguousarray(it),
            np.ascontiguousarray(flow[:, :, 0]), np.ascontiguousarray(flow[:, :, 1]),
            float(params.regularization_weight), params.fixed_point_iterations,
            _SOR_ITERATIONS, _SOR_OMEGA, _EPS_DATA, _EPS_SMOOTH)
        flow = flow + np.stack([du, dv], axis=2)
        if params.median_filter_radius > 0:
            size = 2 * params.median_filter_radius + 1
            flow = np.stack([median_filter(flow[:, :, k], size=size, mode="nearest")
                             for k in range(2)], axis=2)
    return flow


def _prepare(frame, params):
    frame = check_frame(frame)
    img = frame if params.color and frame.shape[2] == 3 else imgops.to_gray(frame)
    return img * _INTENSITY_SCALE


def estimate_flow(frame_t, frame_t1, params=None):
    """Dense flow from ``frame_t`` to ``frame_t1`` as an (H, W, 2) array (u, v)."""
    params = params or FlowParams()
    check_same_size(frame_t, frame_t1, names=["frame_t", "frame_t1"])
    i0, i1 = _prepare(frame_t, params), _prepare(frame_t1, params)
    h, w = i0.shape[:2]
    if min(h, w) < _MIN_LEVEL_SIZE:
        raise DataError(f"frames must be at least {_MIN_LEVEL_SIZE}x{_MIN_LEVEL_SIZE}, got {w}x{h}")
    # levels that would drop below 8 px are not built
    shapes = _level_shapes(h, w, params)
    pyr0, pyr1 = _pyramid(i0, shapes, params), _pyramid(i1, shapes, params)
    flow = np.zeros(shapes[-1] + (2,))
    for level in range(len(shapes) - 1, -1, -1):
        lh, lw = shapes[level]
        if flow.shape[:2] != (lh, lw):
            sy, sx = lh / flow.shape[0], lw / flow.shape[1]
            flow = imgops.resize_bilinear(flow, lh, lw) * np.array([sx, sy])
        flow = _solve_level(pyr0[level], pyr1[level], flow, params)
    return flow


def estimate_flow_pair(frame_t, frame_t1, params=None):
    """Forward (t -> t+1) and backward (t+1 -> t) flow."""
    return estimate_flow(frame_t, frame_t1, params), estimate_flow(frame_t1, frame_t, params)


def warp_image(frame, flow):
    """Bilinearly sample ``frame`` at ``p + flow(p)``, clamping at the borders."""
    frame = np.asarray(frame, dtype=np.float64)
    flow = check_flow(flow)
    if frame.shape[:2] != flow.shape[:2]:
        raise DimensionMismatchError(f"frame {frame.shape[:2]} vs flow {flow.shape[:2]}")
    return imgops.warp(frame, flow)


def endpoint_error(flow, truth):
    flow = np.asarray(flow, dtype=np.float64)
    truth = np.broadcast_to(np.asarray(truth, dtype=np.float64), flow.shape)
    return np.sqrt(((flow - truth) ** 2).sum(axis=2))
