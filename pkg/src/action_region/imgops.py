"""Small raster primitives shared by the flow, feature and proposal code.

All border handling is clamp-to-edge.
"""
import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.shape[2] == 1:
        return frame[:, :, 0]
    return frame @ LUMA


def central_gradient(img):
    """Central differences along x and y (axis 1 and 0) with clamped borders."""
    img = np.asarray(img, dtype=np.float64)
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(img, pad, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def box_sum(img, radius):
    """Sum over a (2r+1)x(2r+1) window with clamped borders.

    Explicit shifted sums rather than running sums, so all-zero
    neighbourhoods give exactly zero.
    """
    img = np.asarray(img, dtype=np.float64)
    if radius == 0:
        return img.copy()
    h, w = img.shape[:2]
    pad = [(radius, radius), (0, 0)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(img, pad, mode="edge")
    rows = sum(p[k:k + h] for k in range(2 * radius + 1))
    pad = [(0, 0), (radius, radius)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(rows, pad, mode="edge")
    return sum(p[:, k:k + w] for k in range(2 * radius + 1))


def bilinear_sample(img, xs, ys):
    """Sample ``img`` at float coordinates, clamping them to the raster.

    ``img`` may carry trailing channel axes; ``xs``/``ys`` share one shape.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if img.ndim > 2:
        fx = fx[(...,) + (None,) * (img.ndim - 2)]
        fy = fy[(...,) + (None,) * (img.ndim - 2)]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def warp(img, flow):
    """Sample ``img`` at ``p + flow(p)`` for every pixel p."""
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return bilinear_sample(img, xs + flow[:, :, 0], ys + flow[:, :, 1])


def resize_bilinear(img, out_h, out_w):
    """Pixel-centre-aligned bilinear resize with clamped borders."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, xx, yy)


def downsample2(img):
    """2x2 block average; odd sizes are edge-padded first."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    pad = [(0, h % 2), (0, w % 2)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(img, pad, mode="edge")
    return 0.25 * (p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2])


def upsample_to(img, h, w, factor=2):
    """Bilinear upsampling of a ``factor``-times coarser raster to (h, w)."""
    ys = (np.arange(h) + 0.5) / factor - 0.5
    xs = (np.arange(w) + 0.5) / factor - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, xx, yy)


def at_coarse_scale(fn, img):
    """Apply ``fn`` to the 2x-downsampled ``img`` and upsample the result back."""
    h, w = img.shape[:2]
    out = fn(downsample2(img))
    if isinstance(out, tuple):
        return tuple(upsample_to(o, h, w) for o in out)
    return upsample_to(out, h, w)


def thin_edges(values, radius=1):
    """Non-maximum suppression of a soft edge map across its local orientation.

    Orientation comes from the gradient of the (2r+1)^2 box-smoothed map and is
    quantised to 0/45/90/135 degrees; pixels smaller than either neighbour
    along it are zeroed.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    gx, gy = central_gradient(box_sum(values, radius))
    q = np.round(np.mod(np.arctan2(gy, gx), np.pi) / (np.pi / 4)).astype(np.intp) % 4
    p = np.pad(values, 1, mode="edge")
    out = values.copy()
    for k, (dy, dx) in enumerate(((0, 1), (1, 1), (1, 0), (1, -1))):
        ahead = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        behind = p[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        out[(q == k) & ((values < ahead) | (values < behind))] = 0.0
    return out
