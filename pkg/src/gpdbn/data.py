"""Binary silhouette datasets: file formats, synthetic shapes, corruption
and the structural similarity score used across all experiments.

Images are stored flat, one row per image, as float64 zeros and ones.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

CACHE_MAGIC = b"BSIL1\0"
SSIM_WINDOW = 3
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class ImageDataset:
    images: np.ndarray
    width: int
    height: int
    name: str = "dataset"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 2 or self.images.shape[1] != self.width * self.height:
            raise ValueError(
                f"images must be (N, {self.width * self.height}), got {self.images.shape}"
            )
        bad = ~((self.images == 0.0) | (self.images == 1.0))
        if np.any(bad):
            raise ValueError("images must be binary (0.0 or 1.0)")

    def __len__(self) -> int:
        return self.images.shape[0]

    def grid(self, i: int) -> np.ndarray:
        return self.images[i].reshape(self.height, self.width)


# ---------------------------------------------------------------------------
# PGM

def _pgm_header_tokens(raw: bytes):
    """Yield whitespace-separated header tokens, skipping # comments, and
    finally the offset just past the single whitespace after the last one."""
    i = 0
    found = 0
    while found < 4:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated PGM header")
        found += 1
        yield raw[start:i]
    yield i + 1


def load_pgm(path) -> tuple[np.ndarray, int, int]:
    """Read one P2/P5 image and binarize it: value > maxval/2 becomes 1."""
    raw = Path(path).read_bytes()
    tokens = list(_pgm_header_tokens(raw))
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    body = tokens[4]
    count = width * height
    if magic == b"P5":
        if maxval > 255:
            raise ValueError("two-byte P5 samples are not supported")
        pixels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=body)
        if pixels.size != count:
            raise ValueError(f"{path}: expected {count} pixels")
        values = pixels.astype(np.float64)
    elif magic == b"P2":
        fields = raw[body - 1 :].split()
        if len(fields) < count:
            raise ValueError(f"{path}: expected {count} pixels")
        values = np.array([int(v) for v in fields[:count]], dtype=np.float64)
    else:
        raise ValueError(f"{path}: not a P2/P5 PGM (magic {magic!r})")
    bits = (values > maxval / 2.0).astype(np.float64)
    return bits, width, height


def load_pgm_dir(path) -> ImageDataset:
    """All *.pgm files under a directory, in lexicographic filename order."""
    files = sorted(Path(path).glob("*.pgm"), key=lambda f: f.name)
    if not files:
        raise ValueError(f"no .pgm files in {path}")
    rows, width, height = [], None, None
    for f in files:
        bits, w, h = load_pgm(f)
        if width is None:
            width, height = w, h
        elif (w, h) != (width, height):
            raise ValueError(f"{f}: size {w}x{h} does not match {width}x{height}")
        rows.append(bits)
    return ImageDataset(np.stack(rows), width, height, name=Path(path).name)


def write_pgm(path, values: np.ndarray, width: int, height: int, binary: bool = True):
    """Write grayscale values in [0, 1] as an 8-bit P5 (or ascii P2) image."""
    levels = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255)
    levels = levels.astype(np.uint8).reshape(height, width)
    with open(path, "wb") as f:
        if binary:
            f.write(f"P5\n{width} {height}\n255\n".encode())
            f.write(levels.tobytes())
        else:
            f.write(f"P2\n{width} {height}\n255\n".encode())
            for row in levels:
                f.write((" ".join(str(int(v)) for v in row) + "\n").encode())


# ---------------------------------------------------------------------------
# IDX

def load_idx(images_path, labels_path=None, limit=None, digits=None) -> ImageDataset:
    """Big-endian IDX image file, binarized at >127; optional label filter."""
    raw = Path(images_path).read_bytes()
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != 0x00000803:
        raise ValueError(f"{images_path}: bad image magic {magic:#010x}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    if pixels.size != n * rows * cols:
        raise ValueError(f"{images_path}: truncated pixel data")
    images = (pixels.reshape(n, rows * cols) > 127).astype(np.float64)

    if digits is not None and labels_path is None:
        raise ValueError("digit filter needs a labels file")
    if labels_path is not None:
        lraw = Path(labels_path).read_bytes()
        lmagic, ln = struct.unpack(">II", lraw[:8])
        if lmagic != 0x00000801:
            raise ValueError(f"{labels_path}: bad label magic {lmagic:#010x}")
        if ln != n:
            raise ValueError("label count does not match image count")
        labels = np.frombuffer(lraw, dtype=np.uint8, count=n, offset=8)
        if digits is not None:
            keep = np.isin(labels, sorted(digits))
            images = images[keep]
    if limit is not None:
        images = images[:limit]
    return ImageDataset(images, cols, rows, name=Path(images_path).stem)


# ---------------------------------------------------------------------------
# Packed cache

def save_cache(path, dataset: ImageDataset):
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<III", len(dataset), dataset.width, dataset.height))
        f.write(np.packbits(dataset.images.astype(np.uint8).ravel()).tobytes())


def load_cache(path) -> ImageDataset:
    raw = Path(path).read_bytes()
    if raw[:6] != CACHE_MAGIC:
        raise ValueError(f"{path}: bad cache magic {raw[:6]!r}")
    n, width, height = struct.unpack("<III", raw[6:18])
    count = n * width * height
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, offset=18), count=count)
    return ImageDataset(
        bits.reshape(n, width * height).astype(np.float64), width, height, name=Path(path).stem
    )


# ---------------------------------------------------------------------------
# Synthetic star family

def _in_polygon(px: float, py: float, verts: list[tuple[float, float]]) -> bool:
    inside = False
    for i in range(len(verts)):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % len(verts)]
        if (y1 > py) != (y2 > py):
            if px < x1 + (py - y1) / (y2 - y1) * (x2 - x1):
                inside = not inside
    return inside


def gen_stars(n: int = 30, size: int = 32, seed: int = 0) -> ImageDataset:
    """Family of four-point stars morphing into a regular octagon.

    Frame t in [0, 1] keeps the four outer vertices at radius 14 while the
    inner vertices grow from radius 5 to 14.  Pixel centers sit on integer
    coordinates with the shape centered between pixels, and each pixel is
    evaluated in a canonical quadrant reached by exact 90-degree index
    rotations, so every frame is pixel-exact under quarter turns.

    The seed is reserved for future randomized variants; the family itself
    is deterministic.
    """
    del seed
    c = size / 2.0 - 0.5
    outer = 14.0
    images = np.zeros((n, size * size))
    ts = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.0])
    for f, t in enumerate(ts):
        inner = (1.0 - t) * 5.0 + t * 14.0
        verts = []
        for k in range(8):
            radius = outer if k % 2 == 0 else inner
            angle = k * np.pi / 4.0
            verts.append((c + radius * np.cos(angle), c + radius * np.sin(angle)))
        frame = np.zeros((size, size))
        for row in range(size):
            for col in range(size):
                dx, dy = col - c, row - c
                # Rotate into the open quadrant dx > 0, dy > 0; offsets are
                # half-integers so no point lies on an axis.
                while not (dx > 0 and dy > 0):
                    dx, dy = dy, -dx
                frame[row, col] = float(_in_polygon(c + dx, c + dy, verts))
        images[f] = frame.ravel()
    return ImageDataset(images, size, size, name="stars")


# ---------------------------------------------------------------------------
# Corruption and scoring

def salt_pepper(
    images: np.ndarray,
    fraction: float,
    rng: np.random.Generator,
    mode: str = "resample",
) -> np.ndarray:
    """Corrupt an exact pixel count per image: round(fraction * P) distinct
    pixels are resampled to fair coin flips (or inverted with mode="flip")."""
    if mode not in ("resample", "flip"):
        raise ValueError(f"unknown noise mode {mode!r}")
    out = np.array(images, dtype=np.float64, copy=True)
    single = out.ndim == 1
    if single:
        out = out[None, :]
    p = out.shape[1]
    count = int(round(fraction * p))
    for i in range(out.shape[0]):
        idx = rng.choice(p, size=count, replace=False)
        if mode == "resample":
            out[i, idx] = (rng.random(count) < 0.5).astype(np.float64)
        else:
            out[i, idx] = 1.0 - out[i, idx]
    return out[0] if single else out


def ssim(a: np.ndarray, b: np.ndarray, width: int, height: int) -> float:
    """Mean structural similarity over all fully valid 3x3 windows,
    uniform weighting, dynamic range 1, clamped to [0, 1]."""
    ia = np.asarray(a, dtype=np.float64).reshape(height, width)
    ib = np.asarray(b, dtype=np.float64).reshape(height, width)
    if min(width, height) < SSIM_WINDOW:
        raise ValueError("image smaller than the similarity window")

    def win_mean(img):
        return uniform_filter(img, size=SSIM_WINDOW, mode="constant")[1:-1, 1:-1]

    mu_a = win_mean(ia)
    mu_b = win_mean(ib)
    var_a = win_mean(ia * ia) - mu_a**2
    var_b = win_mean(ib * ib) - mu_b**2
    cov = win_mean(ia * ib) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return float(np.clip(np.mean(score), 0.0, 1.0))
