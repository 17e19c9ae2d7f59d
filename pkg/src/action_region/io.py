"""Reading and writing frames, flow fields, boundary maps and proposals.

Arrays follow numpy's row-major layout, so pixel ``(x, y, c)`` of an image
lives at ``frame[y, x, c]`` (flat index ``(y * W + x) * C + c``).

Formats
-------
* frames: PNG (via Pillow) or binary netpbm PGM/PPM (8 or 16 bit)
* flow: Middlebury ``.flo``
* boundary maps and masks: 16-bit binary PGM (``P5``, maxval 65535)
* proposals: JSON lines with ``frame_index, x, y, w, h, score``
"""
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_flow, check_frame, check_map
from .exceptions import DataError, DimensionMismatchError, FormatError

FLO_MAGIC = 202021.25
FLO_TAG = b"PIEH"


@dataclass(frozen=True)
class BoxProposal:
    x: int
    y: int
    w: int
    h: int
    score: float = 0.0
    frame_index: int = 0

    def __post_init__(self):
        for name in ("x", "y", "w", "h", "frame_index"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise DataError(f"box {name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "score", float(self.score))
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise DataError(f"invalid box geometry {self}")
        if not np.isfinite(self.score):
            raise DataError("box score must be finite")

    @property
    def x2(self):
        return self.x + self.w

    @property
    def y2(self):
        return self.y + self.h

    @property
    def area(self):
        return self.w * self.h

    def fits(self, width, height, min_size=1):
        return (self.x2 <= width and self.y2 <= height
                and self.w >= min_size and self.h >= min_size)

    def to_dict(self):
        return {"frame_index": self.frame_index, "x": self.x, "y": self.y,
                "w": self.w, "h": self.h, "score": self.score}


@dataclass
class SequenceManifest:
    """Frame list plus optional per-frame boxes and sequence labels.

    ``root`` is the directory frame names are resolved against.
    """
    root: Path
    frames: list
    boxes: list = None
    action: str = None
    scene: str = None
    abnormal: bool = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        self.frames = list(self.frames)
        if not self.frames:
            raise DataError("manifest lists no frames")
        if self.boxes is not None and len(self.boxes) != len(self.frames):
            raise DataError("manifest boxes must have one entry per frame")

    @property
    def paths(self):
        return [self.root / name for name in self.frames]

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict) or "frames" not in doc:
            raise FormatError(f"{path}: manifest must be an object with a 'frames' list")
        root = Path(doc.get("root", "."))
        if not root.is_absolute():
            root = path.parent / root
        known = {"root", "frames", "boxes", "action", "scene", "abnormal"}
        return cls(root=root, frames=doc["frames"], boxes=doc.get("boxes"),
                   action=doc.get("action"), scene=doc.get("scene"),
                   abnormal=doc.get("abnormal"),
                   extra={k: v for k, v in doc.items() if k not in known})

    def to_dict(self, relative_to=None):
        root = self.root
        if relative_to is not None:
            root = Path(os.path.relpath(self.root, relative_to))
        doc = {"root": root.as_posix(), "frames": list(self.frames)}
        for key in ("boxes", "action", "scene", "abnormal"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        doc.update(self.extra)
        return doc

    def save(self, path):
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(relative_to=path.parent), fh, indent=1, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------- netpbm

def _read_token(buf, pos):
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated netpbm header")
    return buf[start:pos], pos


def read_netpbm(source):
    """Read a binary PGM (P5) or PPM (P6) file.

    Returns ``(raster, maxval)`` with raster of integer dtype and shape
    (H, W) for PGM or (H, W, 3) for PPM.
    """
    buf = Path(source).read_bytes() if not hasattr(source, "read") else source.read()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}")
    try:
        fields = []
        for _ in range(3):
            tok, pos = _read_token(buf, pos)
            fields.append(int(tok))
    except ValueError as exc:
        raise FormatError("malformed netpbm header") from exc
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"malformed netpbm header: {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    payload = buf[pos:pos + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise FormatError("truncated netpbm raster")
    raster = np.frombuffer(payload, dtype=dtype).astype(np.uint16 if maxval > 255 else np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raster.reshape(shape), maxval


def write_netpbm(sink, raster, maxval):
    raster = np.asarray(raster)
    if raster.ndim == 2:
        magic = b"P5"
    elif raster.ndim == 3 and raster.shape[2] == 3:
        magic = b"P6"
    else:
        raise DataError(f"cannot write raster of shape {raster.shape} as netpbm")
    height, width = raster.shape[:2]
    dtype = ">u2" if maxval > 255 else np.uint8
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, maxval)
    body = np.ascontiguousarray(raster).astype(dtype).tobytes()
    if hasattr(sink, "write"):
        sink.write(header + body)
    else:
        Path(sink).write_bytes(header + body)


# ---------------------------------------------------------------- frames

def read_frame(path):
    """Load one image as a float64 (H, W, 3) array in [0, 1].

    Grayscale images are broadcast to three channels.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing frame file {path}")
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        raster, maxval = read_netpbm(path)
        data = raster.astype(np.float64) / maxval
    elif suffix == ".png":
        from PIL import Image

        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I"):
                data = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                img = img.convert("RGB") if img.mode not in ("L", "RGB") else img
                data = np.asarray(img, dtype=np.float64) / 255.0
    else:
        raise FormatError(f"unsupported image format {path.suffix!r} ({path})")
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    return check_frame(data, channels=3, name=str(path))


def write_frame(path, frame):
    """Write a frame; ``.ppm``/``.pgm`` use 16 bits, ``.png`` uses 8 bits."""
    path = Path(path)
    frame = check_frame(frame)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        data = frame if suffix == ".ppm" else frame[:, :, 0]
        if suffix == ".ppm" and frame.shape[2] == 1:
            data = np.repeat(frame, 3, axis=2)
        write_netpbm(path, np.round(data * 65535.0).astype(np.uint16), 65535)
    elif suffix == ".png":
        from PIL import Image

        data = np.round(frame * 255.0).astype(np.uint8)
        mode_data = data[:, :, 0] if data.shape[2] == 1 else data
        Image.fromarray(mode_data).save(path, format="PNG")
    else:
        raise FormatError(f"unsupported image format {path.suffix!r}")


def load_sequence(manifest):
    """Load every frame of ``manifest`` into a (T, H, W, 3) float64 array."""
    if not isinstance(manifest, SequenceManifest):
        manifest = SequenceManifest.load(manifest)
    frames = []
    for path in manifest.paths:
        frame = read_frame(path)
        if frames and frame.shape != frames[0].shape:
            raise DimensionMismatchError(
                f"{path}: frame shape {frame.shape} differs from {frames[0].shape}")
        frames.append(frame)
    return np.stack(frames)


# ---------------------------------------------------------------- flow

def write_flow(flow, sink):
    flow = check_flow(flow)
    height, width = flow.shape[:2]
    payload = (struct.pack("<fii", FLO_MAGIC, width, height)
               + np.ascontiguousarray(flow, dtype="<f4").tobytes())
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        Path(sink).write_bytes(payload)


def read_flow(source):
    """Read a Middlebury ``.flo`` file into a float32 (H, W, 2) array."""
    buf = source.read() if hasattr(source, "read") else Path(source).read_bytes()
    if len(buf) < 12:
        raise FormatError("truncated .flo header")
    if buf[:4] != FLO_TAG:
        raise FormatError(f"bad .flo magic {buf[:4]!r}")
    width, height = struct.unpack("<ii", buf[4:12])
    if width < 1 or height < 1:
        raise FormatError(f"invalid .flo dimensions {width}x{height}")
    count = width * height * 2
    if len(buf) < 12 + 4 * count:
        raise FormatError("truncated .flo payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=12)
    return data.reshape(height, width, 2).astype(np.float32)


# ---------------------------------------------------------------- maps

def write_boundary_map(values, sink):
    values = check_map(values, name="boundary map")
    write_netpbm(sink, np.round(values * 65535.0).astype(np.uint16), 65535)


def read_boundary_map(source):
    raster, maxval = read_netpbm(source)
    if raster.ndim != 2:
        raise FormatError("boundary map must be a single-channel PGM")
    return raster.astype(np.float64) / maxval


# ---------------------------------------------------------------- proposals

def proposal_sort_key(box):
    return (box.frame_index, -box.score, box.x, box.y, box.w, box.h)


def write_proposals(boxes, sink, width=None, height=None):
    """Write boxes as JSON lines, ordered by frame, descending score, then x, y."""
    boxes = list(boxes)
    for box in boxes:
        if not isinstance(box, BoxProposal):
            raise DataError(f"not a BoxProposal: {box!r}")
        if width is not None and not box.fits(width, height):
            raise DataError(f"box {box} exceeds {width}x{height}")
    lines = "".join(json.dumps(b.to_dict()) + "\n" for b in sorted(boxes, key=proposal_sort_key))
    if hasattr(sink, "write"):
        sink.write(lines)
    else:
        Path(sink).write_text(lines)


def read_proposals(source):
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    boxes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            boxes.append(BoxProposal(**json.loads(line)))
        except (TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"proposal line {lineno}: {exc}") from exc
    return boxes
