"""Image/mask I/O, dihedral augmentation, resizing, the synthetic shapes
dataset, and checkpoint serialization.

Images are binary PPM (P6, 8-bit); masks and saliency maps are binary PGM
(P5, 8-bit). Both formats are byte-auditable, which the round-trip tests
rely on.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import NetworkConfig

__all__ = [
    "Sample",
    "DataFormatError",
    "CheckpointError",
    "read_ppm",
    "write_ppm",
    "read_pgm",
    "write_pgm",
    "read_mask",
    "write_map",
    "augment7",
    "AUGMENT_NAMES",
    "resize_bilinear",
    "resize_nearest",
    "resize_sample",
    "ShapeSpec",
    "sample_shape",
    "synth_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "read_manifest",
    "write_manifest",
    "load_manifest_samples",
]

CHECKPOINT_MAGIC = b"RRNETCK1"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    """A file could not be parsed; carries the path and byte offset."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        loc = ""
        if path is not None:
            loc += f" in {path}"
        if offset is not None:
            loc += f" at byte {offset}"
        super().__init__(message + loc)
        self.path = path
        self.offset = offset


class CheckpointError(ValueError):
    pass


@dataclass
class Sample:
    """An RGB image in [0, 1] plus a binary mask at the same resolution."""

    image: np.ndarray  # H x W x 3 float32
    mask: np.ndarray  # H x W float32 in {0, 1}
    id: str = ""

    def validate(self) -> "Sample":
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"sample image must be HxWx3, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(
                f"mask {self.mask.shape} does not match image {self.image.shape[:2]}"
            )
        if not np.isin(np.unique(self.mask), (0.0, 1.0)).all():
            raise ValueError("mask must be strictly binary 0/1")
        return self


# -- netpbm ---------------------------------------------------------------------


def _parse_pnm_header(data: bytes, magic: bytes, path) -> tuple[int, int, int]:
    """Returns (width, height, payload_offset); maxval must be 255."""
    if data[:2] != magic:
        raise DataFormatError(
            f"expected {magic.decode()} file, found {data[:2]!r}", path, 0
        )
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and '#' comments between header tokens
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token:
            raise DataFormatError("truncated header", path, start)
        try:
            fields.append(int(token))
        except ValueError:
            raise DataFormatError(f"bad header token {token!r}", path, start) from None
    if pos >= len(data):
        raise DataFormatError("missing whitespace after maxval", path, pos)
    pos += 1  # single whitespace byte separates header from payload
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise DataFormatError(f"bad dimensions {width}x{height}", path, 2)
    if maxval != 255:
        raise DataFormatError(f"unsupported maxval {maxval} (only 255)", path, 2)
    return width, height, pos


def read_ppm(path) -> np.ndarray:
    """Read a P6 file into an H x W x 3 float32 array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    width, height, pos = _parse_pnm_header(data, b"P6", path)
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise DataFormatError(
            f"payload truncated: expected {need} bytes, found {len(payload)}", path, pos
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (arr.astype(np.float32)) / 255.0


def write_ppm(path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"write_ppm needs an HxWx3 array, got {image.shape}")
    h, w = image.shape[:2]
    payload = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + payload.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 file into an H x W float32 array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    width, height, pos = _parse_pnm_header(data, b"P5", path)
    need = width * height
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise DataFormatError(
            f"payload truncated: expected {need} bytes, found {len(payload)}", path, pos
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return arr.astype(np.float32) / 255.0


def write_pgm(path, values: np.ndarray) -> None:
    """Write a map in [0, 1] as 8-bit P5, quantized with round(v * 255)."""
    if values.ndim != 2:
        raise ValueError(f"write_pgm needs an HxW array, got {values.shape}")
    h, w = values.shape
    payload = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + payload.tobytes())


def read_mask(path) -> np.ndarray:
    """Read a P5 ground-truth mask; bytes >= 128 count as foreground."""
    data = Path(path).read_bytes()
    width, height, pos = _parse_pnm_header(data, b"P5", path)
    need = width * height
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise DataFormatError(
            f"payload truncated: expected {need} bytes, found {len(payload)}", path, pos
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (arr >= 128).astype(np.float32)


write_map = write_pgm


# -- augmentation -----------------------------------------------------------------

AUGMENT_NAMES = (
    "orig",
    "rot90",
    "rot180",
    "rot270",
    "flip",
    "flip_rot90",
    "flip_rot180",
    "flip_rot270",
)


def _dihedral(arr: np.ndarray, name: str) -> np.ndarray:
    if name.startswith("flip"):
        arr = np.flip(arr, axis=1)
        name = name[5:] or "orig"
    if name == "orig":
        return np.ascontiguousarray(arr)
    turns = {"rot90": 1, "rot180": 2, "rot270": 3}[name]
    return np.ascontiguousarray(np.rot90(arr, turns))


def augment7(sample: Sample) -> list[Sample]:
    """The original plus the 7 non-identity symmetries of the square.

    Rotations by 90/270 swap H and W; a later resize normalizes that for
    training.
    """
    out = []
    for name in AUGMENT_NAMES:
        out.append(
            Sample(
                image=_dihedral(sample.image, name),
                mask=_dihedral(sample.mask, name),
                id=f"{sample.id}_{name}" if name != "orig" else sample.id,
            )
        )
    return out


# -- resizing --------------------------------------------------------------------


def _source_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel-center mapping; same-size resize is the identity
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo = np.clip(lo, 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    return lo, hi, frac


def resize_bilinear(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an HxW or HxWxC array to (H_out, W_out)."""
    h_out, w_out = int(size[0]), int(size[1])
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    h_in, w_in = arr.shape[:2]
    if (h_in, w_in) == (h_out, w_out):
        return np.array(arr, copy=True)
    r_lo, r_hi, r_f = _source_coords(h_out, h_in)
    c_lo, c_hi, c_f = _source_coords(w_out, w_in)
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        squeeze = True
    else:
        squeeze = False
    r_f = r_f[:, None, None]
    c_f = c_f[None, :, None]
    top = a[r_lo][:, c_lo] * (1 - c_f) + a[r_lo][:, c_hi] * c_f
    bot = a[r_hi][:, c_lo] * (1 - c_f) + a[r_hi][:, c_hi] * c_f
    out = top * (1 - r_f) + bot * r_f
    out = out.astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float32)
    return out[:, :, 0] if squeeze else out


def resize_nearest(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize; preserves binary masks exactly."""
    h_out, w_out = int(size[0]), int(size[1])
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    h_in, w_in = arr.shape[:2]
    if (h_in, w_in) == (h_out, w_out):
        return np.array(arr, copy=True)
    rows = np.minimum(
        ((np.arange(h_out) + 0.5) * (h_in / h_out)).astype(np.int64), h_in - 1
    )
    cols = np.minimum(
        ((np.arange(w_out) + 0.5) * (w_in / w_out)).astype(np.int64), w_in - 1
    )
    return np.ascontiguousarray(arr[rows][:, cols])


def resize_sample(sample: Sample, size: tuple[int, int]) -> Sample:
    """Bilinear for the image, nearest for the mask (keeps it binary)."""
    return Sample(
        image=resize_bilinear(sample.image, size),
        mask=resize_nearest(sample.mask, size),
        id=sample.id,
    )


# -- synthetic shapes dataset -------------------------------------------------------


@dataclass
class ShapeSpec:
    """A salient primitive: axis-aligned ellipse or rectangle, or a rotated bar."""

    kind: str  # ellipse | rect | bar
    cx: float
    cy: float
    a: float  # semi-axis / half-width along x (bar: half-length)
    b: float  # semi-axis / half-height (bar: half-thickness)
    angle: float = 0.0

    def area(self) -> float:
        if self.kind == "ellipse":
            return math.pi * self.a * self.b
        return 4.0 * self.a * self.b

    def perimeter(self) -> float:
        if self.kind == "ellipse":
            # Ramanujan's approximation
            a, b = self.a, self.b
            return math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))
        return 4.0 * (self.a + self.b)

    def rasterize(self, size: int) -> np.ndarray:
        """Boolean mask over pixel centers."""
        ys, xs = np.mgrid[0:size, 0:size]
        x = xs + 0.5 - self.cx
        y = ys + 0.5 - self.cy
        if self.angle:
            ca, sa = math.cos(self.angle), math.sin(self.angle)
            x, y = ca * x + sa * y, -sa * x + ca * y
        if self.kind == "ellipse":
            return (x / self.a) ** 2 + (y / self.b) ** 2 <= 1.0
        return (np.abs(x) <= self.a) & (np.abs(y) <= self.b)


def sample_shape(rng: np.random.Generator, size: int) -> ShapeSpec:
    # shape extents keep the area-to-perimeter ratio high enough that masks
    # survive the 2x resolution loss of the prediction head
    kind = ("ellipse", "rect", "bar")[rng.integers(0, 3)]
    if kind == "ellipse":
        a = rng.uniform(0.12, 0.24) * size
        b = rng.uniform(0.12, 0.24) * size
        angle = 0.0
    elif kind == "rect":
        a = rng.uniform(0.11, 0.2) * size
        b = rng.uniform(0.11, 0.2) * size
        angle = 0.0
    else:  # elongated bar (rivers, ships)
        a = rng.uniform(0.24, 0.42) * size
        b = rng.uniform(0.055, 0.09) * size
        angle = rng.uniform(0.0, math.pi)
    margin = 0.18 * size
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    return ShapeSpec(kind=kind, cx=cx, cy=cy, a=max(a, 1.0), b=max(b, 1.0), angle=angle)


def _smooth_noise(rng: np.random.Generator, size: int, channels: int, cells: int) -> np.ndarray:
    coarse = rng.normal(0.0, 1.0, size=(cells, cells, channels))
    return resize_bilinear(coarse, (size, size))


def synth_dataset(n: int, seed: int, size: int = 64) -> list[Sample]:
    """Deterministic samples: 1-3 non-overlapping salient shapes over a
    low-contrast textured background.

    Shape colors keep a clear margin from the background color, so the
    saliency rule is learnable at desk scale; masks always satisfy
    1 <= foreground <= half the pixels.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        base = rng.uniform(0.3, 0.7, size=3)
        image = np.clip(
            base[None, None, :] + 0.05 * _smooth_noise(rng, size, 3, max(size // 8, 2)),
            0.0,
            1.0,
        ).astype(np.float32)
        mask = np.zeros((size, size), dtype=bool)
        want = int(rng.integers(1, 4))
        placed = 0
        attempts = 0
        while placed < want and attempts < 40:
            attempts += 1
            spec = sample_shape(rng, size)
            raster = spec.rasterize(size)
            if not raster.any():
                continue
            if (raster & mask).any():
                continue
            if mask.sum() + raster.sum() > 0.5 * size * size:
                continue
            # a contrasting fill color: push each channel away from the base
            direction = np.where(base < 0.5, 1.0, -1.0) * rng.uniform(0.3, 0.55, size=3)
            color = np.clip(base + direction, 0.0, 1.0)
            image[raster] = (
                color[None, :] + rng.normal(0.0, 0.015, size=(int(raster.sum()), 3))
            ).clip(0.0, 1.0)
            mask |= raster
            placed += 1
        if placed == 0:
            # guaranteed fallback: a small centered rectangle
            lo, hi = size // 2 - max(size // 8, 1), size // 2 + max(size // 8, 1)
            direction = np.where(base < 0.5, 1.0, -1.0) * 0.45
            image[lo:hi, lo:hi] = np.clip(base + direction, 0.0, 1.0)
            mask[lo:hi, lo:hi] = True
        samples.append(
            Sample(image=image.astype(np.float32), mask=mask.astype(np.float32), id=f"synth{i:04d}")
        )
    return samples


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(params, cfg: NetworkConfig, path) -> None:
    """Binary checkpoint: magic, version, config snapshot, named f32 entries.

    Each entry carries a CRC32 so payload corruption is detected on load.
    Accepts anything with named_parameters() or an iterable of (name, tensor).
    """
    if hasattr(params, "named_parameters"):
        items = list(params.named_parameters())
    else:
        items = list(params)
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names in checkpoint")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_blob = cfg.to_text().encode("utf-8")
    out += struct.pack("<I", len(cfg_blob))
    out += cfg_blob
    out += struct.pack("<I", len(items))
    for name, tensor in items:
        data = np.ascontiguousarray(
            tensor.data if hasattr(tensor, "data") else tensor, dtype="<f4"
        )
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", data.ndim)
        for d in data.shape:
            out += struct.pack("<I", d)
        payload = data.tobytes()
        out += payload
        out += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"checkpoint truncated while reading {what} at byte {self.pos} in {self.path}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], NetworkConfig]:
    """Load a checkpoint into an ordered name -> float32 array mapping."""
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r} in {path}")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} in {path}; this build reads version "
            f"{CHECKPOINT_VERSION} - re-save the model with a matching build"
        )
    cfg_len = r.u32("config length")
    cfg = NetworkConfig.from_text(r.take(cfg_len, "config").decode("utf-8"))
    count = r.u32("entry count")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u16("name length")
        name = r.take(name_len, "name").decode("utf-8")
        if name in entries:
            raise CheckpointError(f"duplicate entry '{name}' in {path}")
        ndim = r.u8("rank")
        shape = tuple(r.u32("dimension") for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        payload = r.take(4 * n_values, f"payload of '{name}'")
        crc = r.u32("checksum")
        if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
            raise CheckpointError(f"checksum mismatch for entry '{name}' in {path}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return entries, cfg


# -- manifests --------------------------------------------------------------------


def write_manifest(path, pairs: list[tuple[str, str]]) -> None:
    lines = [f"{img}\t{msk}" for img, msk in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, str]]:
    pairs = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(
                f"manifest line {ln} must be 'image<TAB>mask', got {raw!r}", path
            )
        pairs.append((parts[0], parts[1]))
    return pairs


def load_manifest_samples(path) -> list[Sample]:
    base = Path(path).parent
    samples = []
    for img_path, mask_path in read_manifest(path):
        img_p = base / img_path if not Path(img_path).is_absolute() else Path(img_path)
        msk_p = base / mask_path if not Path(mask_path).is_absolute() else Path(mask_path)
        samples.append(
            Sample(image=read_ppm(img_p), mask=read_mask(msk_p), id=Path(img_path).stem)
        )
    return samples
