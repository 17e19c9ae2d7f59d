"""Seeded synthetic video with analytic ground truth.

A textured square ("actor") moves at constant velocity over a periodic
textured background. Optional camera motion translates the whole image:
the background moves by ``-camera`` per frame and the square by
``square - camera``, so the motion boundary depends only on the square's
velocity relative to the background.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import DataError

SCENES = ("office", "corridor", "kitchen", "classroom")
SCENE_TINTS = {
    "office": (0.55, 0.65, 0.95),
    "corridor": (0.95, 0.9, 0.55),
    "kitchen": (0.95, 0.55, 0.5),
    "classroom": (0.55, 0.95, 0.6),
}
ACTIONS = ("wave", "walk", "eat", "read")
ACTION_STRIPE_ANGLES = {"wave": 0.0, "walk": 45.0, "eat": 90.0, "read": 135.0}


def texture(rng, shape, scales=(1.0, 2.5, 6.0), lo=0.1, hi=0.9):
    """Periodic multi-scale blurred noise rescaled to [lo, hi]."""
    h, w = shape
    t = sum(s * gaussian_filter(rng.standard_normal((h, w)), s, mode="wrap") for s in scales)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return lo + (hi - lo) * t


def oriented_texture(rng, shape, angle_deg, lo=0.1, hi=0.9, along=8.0, across=1.0):
    """Periodic noise smoothed anisotropically, elongated along ``angle_deg``."""
    h, w = shape
    noise = np.fft.fft2(rng.standard_normal((h, w)))
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    a = np.deg2rad(angle_deg)
    k_along = kx * np.cos(a) + ky * np.sin(a)
    k_across = -kx * np.sin(a) + ky * np.cos(a)
    g = np.exp(-2 * np.pi ** 2 * ((along * k_along) ** 2 + (across * k_across) ** 2))
    t = np.real(np.fft.ifft2(noise * g))
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return lo + (hi - lo) * t


def stripes(rng, size, angle_deg, period=6.0, contrast=0.35, noise=0.12):
    """Square patch of sinusoidal stripes (gradient along ``angle_deg``) plus texture."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    a = np.deg2rad(angle_deg)
    phase = rng.uniform(0, 2 * np.pi)
    base = 0.5 + contrast * np.sin(2 * np.pi * (xs * np.cos(a) + ys * np.sin(a)) / period + phase)
    base += noise * (texture(rng, (size, size), scales=(1.0, 2.0)) - 0.5)
    return np.clip(base, 0.0, 1.0)


def tint(gray, rgb):
    return np.clip(gray[:, :, None] * np.asarray(rgb, dtype=np.float64)[None, None, :], 0.0, 1.0)


def fourier_shift(img, dx, dy):
    """Periodic sub-pixel translation: ``out(x, y) = img(x - dx, y - dy)``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    phase = np.exp(-2j * np.pi * (kx * dx + ky * dy))
    if img.ndim == 3:
        phase = phase[:, :, None]
    return np.real(np.fft.ifft2(np.fft.fft2(img, axes=(0, 1)) * phase, axes=(0, 1)))


def translated_pair(seed, size=128, shift=(2.0, 0.0)):
    """A textured RGB frame and its periodic translation by ``shift`` (dx, dy).

    The true forward flow is ``shift`` at every pixel.
    """
    rng = np.random.default_rng(seed)
    gray = texture(rng, (size, size))
    rgb = tint(gray, (1.0, 0.9, 0.8))
    moved = np.clip(fourier_shift(rgb, *shift), 0.0, 1.0)
    return rgb, moved


def perimeter_mask(shape, x, y, size):
    mask = np.zeros(shape, dtype=bool)
    mask[y:y + size, x:x + size] = True
    mask[y + 1:y + size - 1, x + 1:x + size - 1] = False
    return mask


@dataclass
class SyntheticSequence:
    frames: np.ndarray          # (T, H, W, 3) in [0, 1]
    boundaries: np.ndarray      # (T, H, W) bool, square perimeter where it moves
    boxes: list                 # per-frame (x, y, w, h) of the square
    square_velocity: tuple
    camera_velocity: tuple
    labels: dict = field(default_factory=dict)


def render_sequence(background, actor, start, square_velocity, camera_velocity, n_frames,
                    noise_level=0.0, rng=None):
    """Composite ``actor`` over a (periodic) ``background`` for ``n_frames``.

    Velocities are integer (dx, dy) per frame; ``square_velocity`` is relative
    to the background.
    """
    h, w = background.shape[:2]
    size = actor.shape[0]
    if size > min(h, w):
        raise DataError(f"square of size {size} does not fit a {w}x{h} frame")
    sv = tuple(int(v) for v in square_velocity)
    cv = tuple(int(v) for v in camera_velocity)
    if sv != tuple(square_velocity) or cv != tuple(camera_velocity):
        raise DataError("synthetic velocities must be integers")
    img_v = (sv[0] - cv[0], sv[1] - cv[1])
    moving = sv != (0, 0)
    frames, masks, boxes = [], [], []
    for t in range(n_frames):
        bg = np.roll(background, shift=(-cv[1] * t, -cv[0] * t), axis=(0, 1))
        x, y = start[0] + img_v[0] * t, start[1] + img_v[1] * t
        if x < 0 or y < 0 or x + size > w or y + size > h:
            raise DataError(f"square leaves the frame at t={t}")
        frame = bg.copy()
        frame[y:y + size, x:x + size] = actor
        if noise_level > 0:
            frame = np.clip(frame + noise_level * rng.standard_normal(frame.shape), 0.0, 1.0)
        frames.append(frame)
        masks.append(perimeter_mask((h, w), x, y, size) if moving else np.zeros((h, w), bool))
        boxes.append((int(x), int(y), size, size))
    return SyntheticSequence(np.stack(frames), np.stack(masks), boxes, sv, cv)


def _start_range(extent, size, v, n_frames):
    lo = max(0, -v * (n_frames - 1))
    hi = min(extent - size, extent - size - v * (n_frames - 1))
    return lo, hi


def place_square(rng, shape, size, img_velocity, n_frames):
    h, w = shape
    if size > min(h, w):
        raise DataError(f"square of size {size} is larger than the {w}x{h} frame")
    (xlo, xhi), (ylo, yhi) = (_start_range(w, size, img_velocity[0], n_frames),
                              _start_range(h, size, img_velocity[1], n_frames))
    if xlo > xhi or ylo > yhi:
        raise DataError("square trajectory does not fit in the frame")
    return int(rng.integers(xlo, xhi + 1)), int(rng.integers(ylo, yhi + 1))


@dataclass(frozen=True)
class SyntheticConfig:
    n_sequences: int = 20
    n_frames: int = 4
    height: int = 128
    width: int = 128
    square_size: tuple = (32, 44)
    square_speed: int = 3           # max |component|, pixels/frame
    camera_speed: int = 0           # max |component|, pixels/frame
    noise_level: float = 0.0
    square_velocity: tuple = None   # fixed velocity instead of sampling
    camera_velocity: tuple = None


def _sample_velocity(rng, max_speed, nonzero):
    if max_speed <= 0:
        return (0, 0)
    while True:
        v = tuple(int(c) for c in rng.integers(-max_speed, max_speed + 1, size=2))
        if not nonzero or v != (0, 0):
            return v


def generate_synthetic_training_set(config=None, rng_seed=0):
    """Moving-square sequences with per-frame boundary masks and boxes."""
    config = config or SyntheticConfig()
    lo, hi = config.square_size
    if hi > min(config.height, config.width):
        raise DataError("square larger than frame")
    rng = np.random.default_rng(rng_seed)
    out = []
    for _ in range(config.n_sequences):
        size = int(rng.integers(lo, hi + 1))
        sv = tuple(config.square_velocity) if config.square_velocity is not None \
            else _sample_velocity(rng, config.square_speed, nonzero=True)
        cv = tuple(config.camera_velocity) if config.camera_velocity is not None \
            else _sample_velocity(rng, config.camera_speed, nonzero=False)
        img_v = (sv[0] - cv[0], sv[1] - cv[1])
        background = tint(texture(rng, (config.height, config.width)), rng.uniform(0.6, 1.0, 3))
        actor = tint(texture(rng, (size, size), scales=(1.0, 2.0)), rng.uniform(0.6, 1.0, 3))
        start = place_square(rng, (config.height, config.width), size, img_v, config.n_frames)
        out.append(render_sequence(background, actor, start, sv, cv, config.n_frames,
                                   config.noise_level, rng))
    return out


def action_sequence(rng, action, background, n_frames=3, size=36, speed=3, camera=(0, 0)):
    """One labelled action clip: a striped actor whose stripe angle encodes the action."""
    h, w = background.shape[:2]
    actor = tint(stripes(rng, size, ACTION_STRIPE_ANGLES[action]), (0.95, 0.95, 0.95))
    sv = _sample_velocity(rng, speed, nonzero=True)
    img_v = (sv[0] - camera[0], sv[1] - camera[1])
    start = place_square(rng, (h, w), size, img_v, n_frames)
    seq = render_sequence(background, actor, start, sv, camera, n_frames)
    seq.labels["action"] = action
    return seq


def biased_background(rng, shape, angle_deg, rgb=(0.8, 0.8, 0.8)):
    """Oriented background texture; the angle is the background 'context' cue."""
    return tint(oriented_texture(rng, shape, angle_deg), rgb)


def scene_background(rng, shape, scene):
    return tint(texture(rng, shape), SCENE_TINTS[scene])


# scenes in which each action is normal; the other two are abnormal pairings
NORMAL_SCENES = {
    "wave": ("office", "corridor"),
    "walk": ("corridor", "kitchen"),
    "eat": ("kitchen", "classroom"),
    "read": ("classroom", "office"),
}


def scene_action_sequence(rng, action, scene, n_frames=3, size=128, camera=(0, 0)):
    seq = action_sequence(rng, action, scene_background(rng, (size, size), scene),
                          n_frames=n_frames, camera=camera)
    seq.labels.update(scene=scene, abnormal=scene not in NORMAL_SCENES[action])
    return seq


def abnormality_suite(rng_seed=0, n_frames=3, size=128):
    """Every (action, scene) pairing once: 16 clips, half of them abnormal."""
    rng = np.random.default_rng(rng_seed)
    return [scene_action_sequence(rng, a, s, n_frames, size) for a in ACTIONS for s in SCENES]


def normal_scene_set(rng_seed=0, per_scene=2, n_frames=3, size=128):
    """Clips of every action in each of its normal scenes (prior and classifier training)."""
    rng = np.random.default_rng(rng_seed)
    return [scene_action_sequence(rng, a, s, n_frames, size)
            for a in ACTIONS for s in NORMAL_SCENES[a] for _ in range(per_scene)]


def write_sequence(seq, directory, frame_format="png"):
    """Frames, truth masks and a ``manifest.json`` under ``directory``."""
    from .io import SequenceManifest, write_boundary_map, write_frame

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names, masks = [], []
    for t, (frame, mask) in enumerate(zip(seq.frames, seq.boundaries)):
        names.append(f"frame_{t:04d}.{frame_format}")
        masks.append(f"mask_{t:04d}.pgm")
        write_frame(directory / names[-1], frame)
        write_boundary_map(mask.astype(np.float64), directory / masks[-1])
    extra = {"masks": masks, "square_velocity": list(seq.square_velocity),
             "camera_velocity": list(seq.camera_velocity)}
    manifest = SequenceManifest(directory, names, boxes=[list(b) for b in seq.boxes],
                                action=seq.labels.get("action"), scene=seq.labels.get("scene"),
                                abnormal=seq.labels.get("abnormal"), extra=extra)
    manifest.save(directory / "manifest.json")
    return directory / "manifest.json"


def write_dataset(sequences, directory, frame_format="png"):
    """One sub-directory per sequence; returns the manifest paths."""
    return [write_sequence(s, Path(directory) / f"seq_{i:03d}", frame_format)
            for i, s in enumerate(sequences)]
