"""Image I/O, bicubic degradation, patch extraction and paired datasets.

Files are binary NetPBM (P5 grayscale, P6 RGB) with maxval 255 — trivially
parseable and bit-exact. The writer emits the canonical header
``P5\\n<w> <h>\\n255\\n``; anything the reader accepts survives a
load/save round trip byte for byte.

Low-resolution counterparts are produced by separable bicubic resampling
(a = -0.5) with the kernel support widened by the scale ratio when
downscaling (antialias), edges clamped, and the result rounded back to the
8-bit grid.

``make_synthetic_dataset`` generates IR-like content at desk scale: a smooth
low-frequency background, a handful of bright Gaussian blobs, and mild
sensor noise. Real data plugs in through a directory of name-matched pairs
(``hr/`` plus ``lr_x2/`` or ``lr_x4/``).
"""

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DimensionError, ImageParseError

__all__ = [
    "ImageBuffer",
    "ImagePair",
    "PairedDataset",
    "PatchPair",
    "load_image",
    "save_image",
    "bicubic_resample",
    "extract_patches",
    "make_synthetic_dataset",
    "load_dataset_dir",
    "write_dataset_dir",
]


@dataclass
class ImageBuffer:
    """8-bit image samples in (C, H, W) layout with a colorspace tag."""

    data: np.ndarray
    colorspace: str

    def __post_init__(self):
        if self.data.dtype != np.uint8 or self.data.ndim != 3:
            raise DimensionError("image data must be uint8 with shape (C, H, W)")
        expected = {"gray": 1, "rgb": 3}.get(self.colorspace)
        if expected is None:
            raise ArgumentError(f"unknown colorspace {self.colorspace!r}")
        if self.data.shape[0] != expected:
            raise DimensionError(
                f"{self.colorspace} image must have {expected} channels, got {self.data.shape[0]}"
            )

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass
class ImagePair:
    lr: ImageBuffer
    hr: ImageBuffer
    name: str


@dataclass
class PairedDataset:
    """Name-matched LR/HR pairs with an exact integer scale relation."""

    pairs: list
    scale: int

    def __post_init__(self):
        for p in self.pairs:
            if (
                p.hr.height != self.scale * p.lr.height
                or p.hr.width != self.scale * p.lr.width
                or p.hr.channels != p.lr.channels
            ):
                raise DimensionError(
                    f"pair {p.name!r}: HR {p.hr.height}x{p.hr.width} is not "
                    f"{self.scale}x the LR {p.lr.height}x{p.lr.width}"
                )

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def _next_token(buf, pos):
    """Skip whitespace/comments, return (token, position past it)."""
    n = len(buf)
    while pos < n:
        ch = buf[pos]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == ord("#"):
            while pos < n and buf[pos] != ord("\n"):
                pos += 1
        else:
            break
    if pos >= n:
        raise ImageParseError("unexpected end of header", pos)
    start = pos
    while pos < n and buf[pos] not in b" \t\r\n":
        pos += 1
    return buf[start:pos], pos


def load_image(path):
    """Parse a binary P5/P6 file into an :class:`ImageBuffer`."""
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageParseError(f"unsupported magic {magic!r}", 0)
    channels = 1 if magic == b"P5" else 3

    dims = []
    for what in ("width", "height", "maxval"):
        token, pos = _next_token(buf, pos)
        start = pos - len(token)
        try:
            dims.append(int(token))
        except ValueError:
            raise ImageParseError(f"malformed {what} {token!r}", start) from None
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise ImageParseError(f"bad dimensions {width}x{height}", pos)
    if maxval != 255:
        raise ImageParseError(f"unsupported depth (maxval {maxval}, need 255)", pos)
    if pos >= len(buf) or buf[pos] not in b" \t\r\n":
        raise ImageParseError("missing whitespace after maxval", pos)
    pos += 1  # exactly one whitespace byte separates header and samples

    expected = channels * height * width
    payload = buf[pos:]
    if len(payload) < expected:
        raise ImageParseError(
            f"truncated pixel data: have {len(payload)} bytes, need {expected}",
            pos + len(payload),
        )
    if len(payload) > expected:
        raise ImageParseError("trailing bytes after pixel data", pos + expected)
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        data = arr.reshape(1, height, width)
    else:
        data = arr.reshape(height, width, 3).transpose(2, 0, 1)
    return ImageBuffer(data=np.ascontiguousarray(data), colorspace="gray" if channels == 1 else "rgb")


def save_image(buf, path):
    """Write the canonical binary P5/P6 encoding."""
    magic = b"P5" if buf.channels == 1 else b"P6"
    header = magic + f"\n{buf.width} {buf.height}\n255\n".encode()
    if buf.channels == 1:
        payload = buf.data[0].tobytes()
    else:
        payload = np.ascontiguousarray(buf.data.transpose(1, 2, 0)).tobytes()
    Path(path).write_bytes(header + payload)


def _cubic_kernel(t, a=-0.5):
    at = abs(t)
    if at <= 1.0:
        return (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    if at < 2.0:
        return a * at**3 - 5.0 * a * at**2 + 8.0 * a * at - 4.0 * a
    return 0.0


def _resample_matrix(n_in, n_out):
    """Dense (n_out, n_in) bicubic weight matrix, antialiased and clamped."""
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    support = 2.0 * fscale
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        j_lo = math.ceil(center - support)
        j_hi = math.floor(center + support)
        weights = [_cubic_kernel((j - center) / fscale) for j in range(j_lo, j_hi + 1)]
        total = sum(weights)
        for j, w in zip(range(j_lo, j_hi + 1), weights):
            mat[i, min(max(j, 0), n_in - 1)] += w / total
    return mat


def bicubic_resample(buf, out_h, out_w):
    """Separable bicubic resize of an :class:`ImageBuffer`."""
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"output size must be positive, got {out_h}x{out_w}")
    wh = _resample_matrix(buf.height, out_h)
    ww = _resample_matrix(buf.width, out_w)
    out = np.empty((buf.channels, out_h, out_w), dtype=np.uint8)
    for c in range(buf.channels):
        resized = wh @ buf.data[c].astype(np.float64) @ ww.T
        out[c] = np.rint(np.clip(resized, 0.0, 255.0)).astype(np.uint8)
    return ImageBuffer(data=out, colorspace=buf.colorspace)


@dataclass
class PatchPair:
    lr: np.ndarray  # (C, p, p) uint8
    hr: np.ndarray  # (C, scale*p, scale*p) uint8
    lr_y: int
    lr_x: int


def extract_patches(pair, scale, patch_lr, stride, seed=None):
    """Cut aligned LR/HR patches on a regular grid.

    Grid offsets run row-major; a seed shuffles the order deterministically.
    Images smaller than the patch yield an empty list with a warning.
    """
    patch_lr, stride = int(patch_lr), int(stride)
    if patch_lr % 2:
        raise ArgumentError(f"LR patch size must be even, got {patch_lr}")
    if patch_lr < 2 or stride < 1:
        raise ArgumentError("patch size must be >= 2 and stride >= 1")
    lr, hr = pair.lr, pair.hr
    if lr.height < patch_lr or lr.width < patch_lr:
        warnings.warn(
            f"image {pair.name!r} ({lr.height}x{lr.width}) smaller than patch {patch_lr}; skipped"
        )
        return []
    patches = []
    for y in range(0, lr.height - patch_lr + 1, stride):
        for x in range(0, lr.width - patch_lr + 1, stride):
            hy, hx, hp = scale * y, scale * x, scale * patch_lr
            patches.append(
                PatchPair(
                    lr=lr.data[:, y : y + patch_lr, x : x + patch_lr].copy(),
                    hr=hr.data[:, hy : hy + hp, hx : hx + hp].copy(),
                    lr_y=y,
                    lr_x=x,
                )
            )
    if seed is not None:
        np.random.default_rng(seed).shuffle(patches)
    return patches


def _synthetic_hr(rng, size):
    """Smooth background + sparse bright blobs + mild noise, uint8."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.full((size, size), 60.0)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, size=2) / size
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(5.0, 15.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(1.5, 4.0)
        amp = rng.uniform(90.0, 160.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    img += rng.normal(0.0, 2.0, size=(size, size))
    return np.rint(np.clip(img, 0.0, 255.0)).astype(np.uint8)


def make_synthetic_dataset(n, size, seed, scale=2):
    """Procedural IR-like pairs: HR at ``size``^2, LR bicubic-downsampled."""
    if size % scale:
        raise ArgumentError(f"size {size} must divide by scale {scale}")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(int(n)):
        hr = ImageBuffer(data=_synthetic_hr(rng, size)[None], colorspace="gray")
        lr = bicubic_resample(hr, size // scale, size // scale)
        pairs.append(ImagePair(lr=lr, hr=hr, name=f"synth_{i:03d}"))
    return PairedDataset(pairs=pairs, scale=scale)


def load_dataset_dir(root, scale):
    """Read a ``hr/`` + ``lr_x<scale>/`` directory of name-matched files."""
    root = Path(root)
    hr_dir = root / "hr"
    lr_dir = root / f"lr_x{scale}"
    if not hr_dir.is_dir() or not lr_dir.is_dir():
        raise ArgumentError(f"{root}: expected hr/ and lr_x{scale}/ subdirectories")
    pairs = []
    for hr_path in sorted(hr_dir.iterdir()):
        if hr_path.suffix not in (".pgm", ".ppm"):
            continue
        lr_path = lr_dir / hr_path.name
        if not lr_path.exists():
            raise ArgumentError(f"missing LR counterpart for {hr_path.name}")
        pairs.append(
            ImagePair(lr=load_image(lr_path), hr=load_image(hr_path), name=hr_path.stem)
        )
    if not pairs:
        raise ArgumentError(f"{root}: no images found")
    return PairedDataset(pairs=pairs, scale=scale)


def write_dataset_dir(dataset, root):
    """Materialize a dataset in the directory layout ``load_dataset_dir`` reads."""
    root = Path(root)
    hr_dir = root / "hr"
    lr_dir = root / f"lr_x{dataset.scale}"
    hr_dir.mkdir(parents=True, exist_ok=True)
    lr_dir.mkdir(parents=True, exist_ok=True)
    ext = ".pgm" if dataset.pairs and dataset.pairs[0].hr.channels == 1 else ".ppm"
    for p in dataset:
        save_image(p.hr, hr_dir / f"{p.name}{ext}")
        save_image(p.lr, lr_dir / f"{p.name}{ext}")
