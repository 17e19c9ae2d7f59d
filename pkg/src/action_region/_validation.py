import numpy as np

from .exceptions import DataError, DimensionMismatchError


def check_frame(frame, channels=None, name="frame"):
    """Return ``frame`` as a float64 (H, W, C) array with values in [0, 1].

    2-D input is treated as a single-channel image.
    """
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise DataError(f"{name} must have shape (H, W) or (H, W, 1|3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{name} is empty")
    if channels is not None and arr.shape[2] != channels:
        raise DataError(f"{name} must have {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(f"{name} values must lie in [0, 1]")
    return arr


def check_flow(flow, name="flow"):
    arr = np.asarray(flow, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise DataError(f"{name} must have shape (H, W, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_map(values, name="map", unit_interval=True):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    if unit_interval and (arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0):
        raise DataError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_size(*arrays, names=None):
    shapes = [np.shape(a)[:2] for a in arrays]
    if any(s != shapes[0] for s in shapes):
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={s}" for n, s in zip(names, shapes))
        raise DimensionMismatchError(f"spatial dimensions differ: {desc}")
    return shapes[0]


def check_distribution(p, name="distribution", atol=1e-6):
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DataError(f"{name} entries must lie in [0, 1]")
    if abs(arr.sum() - 1.0) > atol:
        raise DataError(f"{name} must sum to 1 (got {arr.sum():.9g})")
    return arr
