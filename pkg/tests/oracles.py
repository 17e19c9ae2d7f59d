"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports from the package under test.
"""
import math

import numpy as np


def clamp(v, lo, hi):
    return max(lo, min(hi, v))


def central_diff(img):
    """Per-pixel central differences with clamp-to-edge borders."""
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            gx[y, x] = (img[y, clamp(x + 1, 0, w - 1)] - img[y, clamp(x - 1, 0, w - 1)]) / 2.0
            gy[y, x] = (img[clamp(y + 1, 0, h - 1), x] - img[clamp(y - 1, 0, h - 1), x]) / 2.0
    return gx, gy


def luma(frame):
    return 0.299 * frame[:, :, 0] + 0.587 * frame[:, :, 1] + 0.114 * frame[:, :, 2]


def orientation_bin(gx, gy, bins):
    theta = math.atan2(gy, gx) % math.pi
    return min(int(theta / (math.pi / bins)), bins - 1)


def pixel_hog(gray, bins=8, radius=2):
    """Windowed hard-binned orientation histogram, L2-normalised per pixel."""
    gx, gy = central_diff(gray)
    h, w = gray.shape
    votes = np.zeros((h, w, bins))
    for y in range(h):
        for x in range(w):
            votes[y, x, orientation_bin(gx[y, x], gy[y, x], bins)] += math.hypot(gx[y, x], gy[y, x])
    out = np.zeros((h, w, bins))
    for y in range(h):
        for x in range(w):
            acc = np.zeros(bins)
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += votes[yy, xx]
            n = math.sqrt(float((acc ** 2).sum()))
            out[y, x] = acc / n if n > 0 else 0.0
    return out


def grid_histogram(gray_or_field, bins, grid=4):
    """Per-cell orientation histograms over a grid x grid partition (unnormalised)."""
    gx, gy = central_diff(gray_or_field)
    h, w = gx.shape
    ys = [int(v) for v in np.linspace(0, h, grid + 1)]
    xs = [int(v) for v in np.linspace(0, w, grid + 1)]
    out = np.zeros((grid, grid, bins))
    for i in range(grid):
        for j in range(grid):
            for y in range(ys[i], ys[i + 1]):
                for x in range(xs[j], xs[j + 1]):
                    out[i, j, orientation_bin(gx[y, x], gy[y, x], bins)] += math.hypot(gx[y, x], gy[y, x])
    return out


def bilinear(img, x, y):
    """Sample a 2-D or 3-D raster at real (x, y) with clamp-to-edge."""
    h, w = img.shape[:2]
    x = clamp(x, 0.0, w - 1.0)
    y = clamp(y, 0.0, h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    ax, ay = x - x0, y - y0
    return ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x1])
            + ay * ((1 - ax) * img[y1, x0] + ax * img[y1, x1]))


def resize(img, out_h, out_w):
    """Pixel-centre aligned bilinear resize."""
    h, w = img.shape[:2]
    out = np.zeros((out_h, out_w) + img.shape[2:])
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = bilinear(img, (j + 0.5) * w / out_w - 0.5, (i + 0.5) * h / out_h - 0.5)
    return out


def box_score(values, x, y, w, h, strip, kappa, penalty):
    """Border-contrast score by direct summation."""
    total = float(values[y:y + h, x:x + w].sum())
    if w > 2 * strip and h > 2 * strip:
        inner = float(values[y + strip:y + h - strip, x + strip:x + w - strip].sum())
    else:
        inner = 0.0
    norm = (2.0 * (w + h)) ** kappa
    return inner / norm - penalty * (total - inner) / norm


def iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def greedy_nms(boxes, threshold):
    """boxes: list of (x, y, w, h, score); O(n^2) greedy suppression."""
    order = sorted(boxes, key=lambda b: (-b[4], b[0], b[1], b[2], b[3]))
    kept = []
    for b in order:
        if all(iou(b[:4], k[:4]) <= threshold for k in kept):
            kept.append(b)
    return kept


def softmax_xent(W, b, X, y, l2):
    """Mean cross-entropy with L2 on W, computed row by row."""
    loss = 0.0
    for xi, yi in zip(X, y):
        z = W @ xi + b
        z = z - z.max()
        loss -= z[yi] - math.log(np.exp(z).sum())
    return loss / len(X) + 0.5 * l2 * float((W * W).sum())


def numeric_gradient(fn, params, eps=1e-6):
    grad = np.zeros_like(params)
    it = np.nditer(params, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = params[idx]
        params[idx] = old + eps
        up = fn()
        params[idx] = old - eps
        down = fn()
        params[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def boundary_counts(pred, truth, tol):
    """Matched predicted / truth pixel counts using brute-force distances."""
    py, px = np.nonzero(pred)
    ty, tx = np.nonzero(truth)
    tp_pred = sum(1 for y, x in zip(py, px)
                  if len(ty) and np.min((ty - y) ** 2 + (tx - x) ** 2) <= tol * tol)
    tp_truth = sum(1 for y, x in zip(ty, tx)
                   if len(py) and np.min((py - y) ** 2 + (px - x) ** 2) <= tol * tol)
    return tp_pred, len(py), tp_truth, len(ty)
