"""Single-level orthonormal Haar transform and wavelet feature modulation.

The 2-D transform maps each non-overlapping 2x2 block [[a, b], [c, d]] to the
orthonormal coefficients

    ca = (a + b + c + d) / 2      (approximation)
    ch = ((a + b) - (c + d)) / 2  (horizontal detail)
    cv = ((a + c) - (b + d)) / 2  (vertical detail)
    cd = ((a + d) - (b + c)) / 2  (diagonal detail)

so the inverse is the transpose and energy is preserved exactly. Odd inputs
are replicate-padded on the right/bottom edge; the original size is recorded
on the band container so the inverse reconstructs the input bit-for-bit up
to roundoff.

The modulation block derives a gate from the subbands of a small-receptive-
field feature map and multiplies it into a large-receptive-field map, then
concatenates everything and fuses down to the backbone width.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, DimensionError
from .tensor import Tensor, concat, conv2d, mul, nearest_upsample2, sigmoid, silu
from .tensor import _node

__all__ = ["WaveletBands", "dwt2_haar", "idwt2_haar", "WtfmParams", "WtfmFeatures", "wtfm_forward"]


@dataclass
class WaveletBands:
    """The four half-resolution subbands of a (B, C, H, W) feature map.

    ``orig_h``/``orig_w`` remember the pre-padding input size; they differ
    from ``2 * band_h`` / ``2 * band_w`` only for odd inputs.
    """

    ca: Tensor
    ch: Tensor
    cv: Tensor
    cd: Tensor
    orig_h: int
    orig_w: int

    def __post_init__(self):
        shape = self.ca.data.shape
        for band in (self.ch, self.cv, self.cd):
            if band.data.shape != shape:
                raise DimensionError("all subbands must share one shape")


def _replicate_pad_to_even(x):
    h, w = x.shape[2], x.shape[3]
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    return x, ph, pw


def _fold_pad_grad(gxp, h, w, ph, pw):
    """Transpose of replicate padding: duplicated cells sum back."""
    gx = gxp[:, :, :h, :w].copy()
    if ph:
        gx[:, :, h - 1, :] += gxp[:, :, h, :w]
    if pw:
        gx[:, :, :, w - 1] += gxp[:, :, :h, w]
    if ph and pw:
        gx[:, :, h - 1, w - 1] += gxp[:, :, h, w]
    return gx


def dwt2_haar(x):
    """Forward single-level Haar transform of a (B, C, H, W) tensor."""
    if x.data.ndim != 4:
        raise DimensionError(f"expected (B, C, H, W) input, got {x.data.shape}")
    if x.data.shape[2] < 1 or x.data.shape[3] < 1:
        raise ArgumentError("input must have positive spatial extent")
    h, w = x.data.shape[2], x.data.shape[3]
    xp, ph, pw = _replicate_pad_to_even(x.data)

    a = xp[:, :, 0::2, 0::2]
    b = xp[:, :, 0::2, 1::2]
    c = xp[:, :, 1::2, 0::2]
    d = xp[:, :, 1::2, 1::2]
    ca = (a + b + c + d) * 0.5
    chh = ((a + b) - (c + d)) * 0.5
    cv = ((a + c) - (b + d)) * 0.5
    cd = ((a + d) - (b + c)) * 0.5

    def band_backward(sa, sb, sc, sd):
        # Linear map: each band spreads into its 2x2 basis pattern / 2.
        def backward(g):
            gxp = np.zeros_like(xp)
            gxp[:, :, 0::2, 0::2] = sa * 0.5 * g
            gxp[:, :, 0::2, 1::2] = sb * 0.5 * g
            gxp[:, :, 1::2, 0::2] = sc * 0.5 * g
            gxp[:, :, 1::2, 1::2] = sd * 0.5 * g
            x.accumulate_grad(_fold_pad_grad(gxp, h, w, ph, pw))

        return backward

    return WaveletBands(
        ca=_node(ca, (x,), band_backward(1, 1, 1, 1)),
        ch=_node(chh, (x,), band_backward(1, 1, -1, -1)),
        cv=_node(cv, (x,), band_backward(1, -1, 1, -1)),
        cd=_node(cd, (x,), band_backward(1, -1, -1, 1)),
        orig_h=h,
        orig_w=w,
    )


def idwt2_haar(bands):
    """Exact inverse of :func:`dwt2_haar` (orthonormal transpose plus crop)."""
    ca, ch, cv, cd = bands.ca, bands.ch, bands.cv, bands.cd
    bsz, csz, bh, bw = ca.data.shape
    h, w = bands.orig_h, bands.orig_w
    if not (2 * bh - 1 <= h <= 2 * bh and 2 * bw - 1 <= w <= 2 * bw):
        raise DimensionError(
            f"recorded size {h}x{w} inconsistent with band size {bh}x{bw}"
        )

    out = np.empty((bsz, csz, 2 * bh, 2 * bw))
    out[:, :, 0::2, 0::2] = (ca.data + ch.data + cv.data + cd.data) * 0.5
    out[:, :, 0::2, 1::2] = (ca.data + ch.data - cv.data - cd.data) * 0.5
    out[:, :, 1::2, 0::2] = (ca.data - ch.data + cv.data - cd.data) * 0.5
    out[:, :, 1::2, 1::2] = (ca.data - ch.data - cv.data + cd.data) * 0.5
    data = out[:, :, :h, :w]

    def backward(g):
        if g.shape[2] != 2 * bh or g.shape[3] != 2 * bw:
            gp = np.zeros((bsz, csz, 2 * bh, 2 * bw))
            gp[:, :, :h, :w] = g
            g = gp
        a = g[:, :, 0::2, 0::2]
        b = g[:, :, 0::2, 1::2]
        c = g[:, :, 1::2, 0::2]
        d = g[:, :, 1::2, 1::2]
        ca.accumulate_grad((a + b + c + d) * 0.5)
        ch.accumulate_grad(((a + b) - (c + d)) * 0.5)
        cv.accumulate_grad(((a + c) - (b + d)) * 0.5)
        cd.accumulate_grad(((a + d) - (b + c)) * 0.5)

    return _node(np.ascontiguousarray(data), (ca, ch, cv, cd), backward)


@dataclass
class WtfmParams:
    """Weights of the wavelet feature modulation block.

    ``conv3``/``conv7`` lift the input image to ``cf``-channel feature maps
    at two receptive-field scales; ``mod1``/``mod2`` map the concatenated
    subbands (4*cf channels) back down to the gate; ``fuse`` is the 1x1
    projection from the 3*cf concat to the backbone width. ``gate`` selects
    the nonlinearity between the two gate convolutions.
    """

    conv3_w: Tensor
    conv3_b: Tensor
    conv7_w: Tensor
    conv7_b: Tensor
    mod1_w: Tensor
    mod1_b: Tensor
    mod2_w: Tensor
    mod2_b: Tensor
    fuse_w: Tensor
    fuse_b: Tensor
    gate: str = "silu"


class WtfmFeatures(NamedTuple):
    f: Tensor           # small receptive field map, (B, cf, H, W)
    f_prime: Tensor     # large receptive field map, (B, cf, H, W)
    f_mod: Tensor       # modulated map, (B, cf, H, W)
    f_combined: Tensor  # channel concat of the above, (B, 3*cf, H, W)
    fused: Tensor       # 1x1 fusion to the backbone width


def wtfm_forward(x, params):
    """Run the modulation block on a (B, C, H, W) image tensor."""
    if x.data.ndim != 4:
        raise DimensionError(f"expected (B, C, H, W) input, got {x.data.shape}")
    if x.data.shape[2] < 2 or x.data.shape[3] < 2:
        raise ArgumentError("spatial extent must be at least 2x2")
    h, w = x.data.shape[2], x.data.shape[3]

    f = conv2d(x, params.conv3_w, params.conv3_b, padding=1)
    f_prime = conv2d(x, params.conv7_w, params.conv7_b, padding=3)

    bands = dwt2_haar(f)
    f_wavelet = concat([bands.ca, bands.ch, bands.cv, bands.cd], axis=1)
    gate_act = silu if params.gate == "silu" else sigmoid
    g = conv2d(f_wavelet, params.mod1_w, params.mod1_b, padding=1)
    g = conv2d(gate_act(g), params.mod2_w, params.mod2_b, padding=1)
    g = nearest_upsample2(g)
    if g.data.shape[2] != h or g.data.shape[3] != w:
        g = _crop_hw(g, h, w)
    f_mod = mul(f_prime, g)

    f_combined = concat([f, f_prime, f_mod], axis=1)
    fused = conv2d(f_combined, params.fuse_w, params.fuse_b)
    return WtfmFeatures(f, f_prime, f_mod, f_combined, fused)


def _crop_hw(x, h, w):
    """Top-left spatial crop; backward zero-pads back."""
    full_h, full_w = x.data.shape[2], x.data.shape[3]
    data = np.ascontiguousarray(x.data[:, :, :h, :w])

    def backward(g):
        gp = np.zeros((x.data.shape[0], x.data.shape[1], full_h, full_w))
        gp[:, :, :h, :w] = g
        x.accumulate_grad(gp)

    return _node(data, (x,), backward)
