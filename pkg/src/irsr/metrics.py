"""Full-reference image quality metrics and the evaluation report.

All metrics operate on float64 arrays on the [0, 255] intensity grid (pass
``quantize=True`` to :func:`evaluate_pairs` to mimic file-based evaluation
on rounded 8-bit values). Three-channel images are reduced to the BT.601
studio-swing luminance channel first; metrics never see chrominance.

Residual analysis bins the absolute per-pixel error into four lower-
inclusive ranges: [0,5) minimal, [5,10) moderate, [10,15) high, and
[15, inf) severe. Per-image fractions are averaged across the set.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError

__all__ = [
    "rgb_to_y",
    "mse",
    "psnr",
    "ssim",
    "residual_distribution",
    "ImageScore",
    "EvalReport",
    "evaluate_pairs",
]

RESIDUAL_BIN_EDGES = (5.0, 10.0, 15.0)
RESIDUAL_BIN_LABELS = ("minimal [0,5)", "moderate [5,10)", "high [10,15)", "severe [15,inf)")


def _as_array(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def rgb_to_y(img):
    """BT.601 studio-swing luminance of a (3, H, W) image in [0, 255].

    ``Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255``, returned as
    (1, H, W).
    """
    arr = _as_array(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) input, got {arr.shape}")
    y = 16.0 + (65.481 * arr[0] + 128.553 * arr[1] + 24.966 * arr[2]) / 255.0
    return y[None]


def _check_same_shape(sr, gt):
    if sr.shape != gt.shape:
        raise DimensionError(f"image shapes differ: {sr.shape} vs {gt.shape}")


def mse(sr, gt):
    sr, gt = _as_array(sr), _as_array(gt)
    _check_same_shape(sr, gt)
    return float(np.mean((sr - gt) ** 2))


def psnr(sr, gt, peak=255.0):
    """10 log10(peak^2 / MSE) in dB; ``inf`` signals identical images."""
    err = mse(sr, gt)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _gaussian_kernel():
    offsets = np.arange(_SSIM_WINDOW) - (_SSIM_WINDOW - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


def _filter_valid(img, kernel):
    out = sliding_window_view(img, len(kernel), axis=0).dot(kernel)
    return sliding_window_view(out, len(kernel), axis=1).dot(kernel)


def ssim(sr, gt, peak=255.0):
    """Mean local structural similarity with the standard Gaussian window.

    Inputs are 2-D; the 11-tap sigma-1.5 window is applied in valid mode,
    with ``C1 = (0.01 peak)^2`` and ``C2 = (0.03 peak)^2``.
    """
    sr, gt = _as_array(sr), _as_array(gt)
    _check_same_shape(sr, gt)
    if sr.ndim != 2:
        raise DimensionError(f"ssim expects 2-D images, got {sr.shape}")
    if min(sr.shape) < _SSIM_WINDOW:
        raise ArgumentError(
            f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, got {sr.shape}"
        )
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    kern = _gaussian_kernel()

    mu1 = _filter_valid(sr, kern)
    mu2 = _filter_valid(gt, kern)
    var1 = _filter_valid(sr * sr, kern) - mu1 * mu1
    var2 = _filter_valid(gt * gt, kern) - mu2 * mu2
    cov = _filter_valid(sr * gt, kern) - mu1 * mu2

    num = (2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
    return float(np.mean(num / den))


def residual_distribution(sr, gt):
    """Fractions of pixels per absolute-error bin; sums to one."""
    sr, gt = _as_array(sr), _as_array(gt)
    _check_same_shape(sr, gt)
    err = np.abs(gt - sr)
    lo, mid, hi = RESIDUAL_BIN_EDGES
    return np.array(
        [
            np.mean(err < lo),
            np.mean((err >= lo) & (err < mid)),
            np.mean((err >= mid) & (err < hi)),
            np.mean(err >= hi),
        ]
    )


@dataclass
class ImageScore:
    name: str
    psnr: float
    mse: float
    ssim: float
    bins: np.ndarray
    identical: bool = False


@dataclass
class EvalReport:
    """Per-image and aggregate scores plus the residual-bin averages."""

    per_image: list = field(default_factory=list)

    @property
    def psnr_mean(self):
        return float(np.mean([s.psnr for s in self.per_image]))

    @property
    def mse_mean(self):
        return float(np.mean([s.mse for s in self.per_image]))

    @property
    def ssim_mean(self):
        return float(np.mean([s.ssim for s in self.per_image]))

    @property
    def residual_bins(self):
        return np.mean([s.bins for s in self.per_image], axis=0)

    def to_table(self):
        lines = [f"{'name':<24}{'psnr_db':>10}{'mse':>12}{'ssim':>9}  residual%"]
        for s in self.per_image:
            p = "identical" if s.identical else f"{s.psnr:.4f}"
            bins = "/".join(f"{100 * v:.1f}" for v in s.bins)
            lines.append(f"{s.name:<24}{p:>10}{s.mse:>12.4f}{s.ssim:>9.4f}  {bins}")
        bins = "/".join(f"{100 * v:.1f}" for v in self.residual_bins)
        lines.append(
            f"{'mean':<24}{self.psnr_mean:>10.4f}{self.mse_mean:>12.4f}"
            f"{self.ssim_mean:>9.4f}  {bins}"
        )
        return "\n".join(lines)

    def to_keyvalues(self):
        d = self.residual_bins
        lines = [
            f"psnr_mean = {self.psnr_mean!r}",
            f"ssim_mean = {self.ssim_mean!r}",
            f"mse_mean = {self.mse_mean!r}",
        ]
        lines += [f"d{k + 1} = {float(d[k])!r}" for k in range(4)]
        return "\n".join(lines)


def _to_luma(img):
    arr = _as_array(img)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[0] == 1:
        return arr[0]
    if arr.ndim == 3 and arr.shape[0] == 3:
        return rgb_to_y(arr)[0]
    raise DimensionError(f"expected (H,W), (1,H,W) or (3,H,W) image, got {arr.shape}")


def evaluate_pairs(pairs, border_crop=0, quantize=False):
    """Score an iterable of ``(name, sr, gt)`` image triples.

    Three-channel images are reduced to luminance; ``border_crop`` trims
    that many pixels from every side before scoring; ``quantize`` rounds
    the reconstruction to the 8-bit grid first.
    """
    border_crop = int(border_crop)
    if border_crop < 0:
        raise ArgumentError("border_crop must be >= 0")
    report = EvalReport()
    for name, sr, gt in pairs:
        sr2, gt2 = _to_luma(sr), _to_luma(gt)
        if quantize:
            sr2 = np.clip(np.rint(sr2), 0.0, 255.0)
        if border_crop:
            if 2 * border_crop >= min(sr2.shape):
                raise ArgumentError(f"border crop {border_crop} swallows image {name}")
            sr2 = sr2[border_crop:-border_crop, border_crop:-border_crop]
            gt2 = gt2[border_crop:-border_crop, border_crop:-border_crop]
        err = mse(sr2, gt2)
        report.per_image.append(
            ImageScore(
                name=name,
                psnr=psnr(sr2, gt2),
                mse=err,
                ssim=ssim(sr2, gt2),
                bins=residual_distribution(sr2, gt2),
                identical=err == 0.0,
            )
        )
    return report
