"""State-space sequence machinery.

The building blocks here follow the diagonal state-space convention: each
channel carries N independent scalar states, the continuous system
(A, B, C, D) is discretized by zero-order hold with a per-channel timescale,
and sequences are processed by the linear recurrence

    h_t = a_bar * h_{t-1} + b_bar * x_t
    y_t = sum_n c * h_t + d * x_t

Two scan flavors are provided: a time-invariant one (``ssm_scan_lti``, which
also admits an equivalent causal convolution kernel via ``ssm_kernel``) and a
selective one whose timescale and input/readout maps are functions of the
current input. Both are single tape nodes with hand-derived backward passes;
taping every timestep would be needlessly slow for long sequences.

For 2-D feature maps, ``scan_2d`` runs a 1-D scan along four raster
orderings of the grid (row/column, forward/reverse) and averages the results
folded back into place.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError
from .tensor import Tensor, flip, linear, permute, reshape, scale, softplus
from .tensor import _node  # shared tape-node constructor

__all__ = [
    "SsmParams",
    "ScanDirection",
    "DIRECTIONS",
    "SelectiveScanParams",
    "discretize_zoh",
    "ssm_kernel",
    "ssm_scan_lti",
    "selective_scan",
    "frozen_selective_params",
    "unfold_direction",
    "fold_direction",
    "scan_2d",
]

# Below this magnitude the ZOH input map uses its analytic small-argument
# limit (phi -> 1) instead of the (exp(z)-1)/z form.
_ZOH_EPS = 1e-8


def _phi(z):
    """(exp(z) - 1) / z with the removable singularity filled in."""
    small = np.abs(z) < _ZOH_EPS
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0, (np.exp(z) - 1.0) / safe)


def _phi_prime(z):
    """Derivative of ``_phi``: (exp(z)(z-1) + 1) / z^2, -> 1/2 at z = 0."""
    small = np.abs(z) < _ZOH_EPS
    safe = np.where(small, 1.0, z)
    return np.where(small, 0.5, (np.exp(z) * (z - 1.0) + 1.0) / (safe * safe))


def discretize_zoh(a, b, delta):
    """Zero-order-hold discretization of a diagonal continuous system.

    ``a`` and ``b`` are (C, N), ``delta`` is (C,) and must be positive.
    Returns ``(a_bar, b_bar)`` with ``a_bar = exp(delta * a)`` and
    ``b_bar = (delta*a)^-1 (exp(delta*a) - 1) * delta * b``, taking the
    analytic limit ``delta * b`` as ``delta * a -> 0``. Differentiable in
    all three inputs.
    """
    if a.data.ndim != 2 or b.data.shape != a.data.shape:
        raise DimensionError("a and b must both be (C, N)")
    if delta.data.shape != (a.data.shape[0],):
        raise DimensionError(f"delta must have shape ({a.data.shape[0]},)")
    if np.any(delta.data <= 0):
        raise ArgumentError("delta must be positive")

    da = delta.data[:, None] * a.data
    a_bar_val = np.exp(da)
    phi = _phi(da)
    phip = _phi_prime(da)
    b_bar_val = phi * delta.data[:, None] * b.data

    def backward_a_bar(g):
        a.accumulate_grad(g * delta.data[:, None] * a_bar_val)
        delta.accumulate_grad((g * a.data * a_bar_val).sum(axis=1))

    def backward_b_bar(g):
        db = delta.data[:, None] * b.data
        b.accumulate_grad(g * phi * delta.data[:, None])
        a.accumulate_grad(g * phip * delta.data[:, None] * db)
        delta.accumulate_grad((g * (phip * a.data * db + phi * b.data)).sum(axis=1))

    a_bar = _node(a_bar_val, (a, delta), backward_a_bar)
    b_bar = _node(b_bar_val, (a, b, delta), backward_b_bar)
    return a_bar, b_bar


@dataclass
class SsmParams:
    """Discrete diagonal state-space parameters.

    ``a_bar``, ``b_bar``, ``c`` are (C, N) tensors, ``d`` is (C,). ``delta``
    keeps the timescale used for discretization when the parameters came
    from a continuous system (informational otherwise).
    """

    a_bar: Tensor
    b_bar: Tensor
    c: Tensor
    d: Tensor
    delta: Tensor | None = None

    def __post_init__(self):
        cn = self.a_bar.data.shape
        if len(cn) != 2:
            raise DimensionError("a_bar must be (C, N)")
        if self.b_bar.data.shape != cn or self.c.data.shape != cn:
            raise DimensionError("a_bar, b_bar, c must share shape (C, N)")
        if self.d.data.shape != (cn[0],):
            raise DimensionError(f"d must have shape ({cn[0]},)")

    @property
    def channels(self):
        return self.a_bar.data.shape[0]

    @property
    def state_dim(self):
        return self.a_bar.data.shape[1]

    @classmethod
    def from_continuous(cls, a, b, c, d, delta):
        a_bar, b_bar = discretize_zoh(a, b, delta)
        return cls(a_bar=a_bar, b_bar=b_bar, c=c, d=d, delta=delta)


def ssm_kernel(params, length):
    """Causal convolution kernel equivalent to the LTI scan.

    ``K[c, i] = sum_n c[c,n] * a_bar[c,n]^i * b_bar[c,n]``; convolving the
    input with K and adding ``d * x`` reproduces ``ssm_scan_lti``.
    """
    length = int(length)
    if length < 1:
        raise ArgumentError("kernel length must be >= 1")
    powers = params.a_bar.data[:, :, None] ** np.arange(length)
    kern = np.einsum("cn,cnl,cn->cl", params.c.data, powers, params.b_bar.data)
    return Tensor(kern)


def ssm_scan_lti(params, x):
    """Run the time-invariant recurrence over (B, C, L) sequences.

    Hidden state starts at zero. Differentiable w.r.t. the input and all
    four parameter tensors via a single backward sweep through time.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"expected (B, C, L) input, got {x.data.shape}")
    b_sz, c_sz, length = x.data.shape
    if c_sz != params.channels:
        raise DimensionError(f"input has {c_sz} channels, params expect {params.channels}")
    a_bar, b_bar, c, d = params.a_bar, params.b_bar, params.c, params.d
    n = params.state_dim

    bx = b_bar.data[None, :, None, :] * x.data[:, :, :, None]
    hs = np.empty((b_sz, c_sz, length, n))
    h = np.zeros((b_sz, c_sz, n))
    for t in range(length):
        h = a_bar.data * h + bx[:, :, t]
        hs[:, :, t] = h
    y = np.einsum("bcln,cn->bcl", hs, c.data) + d.data[None, :, None] * x.data

    def backward(gy):
        c.accumulate_grad(np.einsum("bcl,bcln->cn", gy, hs))
        d.accumulate_grad(np.einsum("bcl,bcl->c", gy, x.data))
        ghs = gy[:, :, :, None] * c.data[None, :, None, :]
        dbx = np.empty_like(hs)
        dh = np.zeros((b_sz, c_sz, n))
        for t in range(length - 1, -1, -1):
            dh = dh + ghs[:, :, t]
            dbx[:, :, t] = dh
            dh = dh * a_bar.data
        if length > 1:
            a_bar.accumulate_grad(np.einsum("bcln,bcln->cn", dbx[:, :, 1:], hs[:, :, :-1]))
        elif a_bar.requires_grad:
            a_bar.accumulate_grad(np.zeros_like(a_bar.data))
        b_bar.accumulate_grad(np.einsum("bcln,bcl->cn", dbx, x.data))
        x.accumulate_grad(
            np.einsum("bcln,cn->bcl", dbx, b_bar.data) + gy * d.data[None, :, None]
        )

    return _node(y, (x, a_bar, b_bar, c, d), backward)


@dataclass
class SelectiveScanParams:
    """Input-dependent scan parameterization.

    The timescale, input map and readout map are affine functions of the
    current input: ``delta_t = softplus(x_t @ w_delta^T + b_delta)`` (per
    channel), ``B_t = x_t @ w_b^T + b_b`` and ``C_t = x_t @ w_c^T + b_c``
    (per state, shared across channels). ``a`` is the continuous diagonal
    (C, N), negative at initialization; ``d`` the (C,) feed-through.
    """

    w_delta: Tensor
    b_delta: Tensor
    w_b: Tensor
    b_b: Tensor
    w_c: Tensor
    b_c: Tensor
    a: Tensor
    d: Tensor

    @property
    def channels(self):
        return self.a.data.shape[0]

    @property
    def state_dim(self):
        return self.a.data.shape[1]

    def tensors(self):
        return (
            self.w_delta, self.b_delta, self.w_b, self.b_b,
            self.w_c, self.b_c, self.a, self.d,
        )


def frozen_selective_params(delta0, b0, c0, a, d):
    """Selective parameters with zero weights, i.e. constant delta/B/C.

    With these the selective scan degenerates to the time-invariant scan
    built from ``discretize_zoh(a, tile(b0), delta0)``.
    """
    delta0 = np.asarray(delta0, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    c0 = np.asarray(c0, dtype=np.float64)
    channels = delta0.shape[0]
    n = b0.shape[0]
    return SelectiveScanParams(
        w_delta=Tensor(np.zeros((channels, channels))),
        b_delta=Tensor(np.log(np.expm1(delta0))),
        w_b=Tensor(np.zeros((n, channels))),
        b_b=Tensor(b0),
        w_c=Tensor(np.zeros((n, channels))),
        b_c=Tensor(c0),
        a=Tensor(a),
        d=Tensor(d),
    )


def _selective_scan_core(x, delta, bt, ct, a, d):
    """Selective recurrence over (B, L, C) with per-step ZOH discretization."""
    b_sz, length, c_sz = x.data.shape
    n = a.data.shape[1]

    da = delta.data[:, :, :, None] * a.data[None, None, :, :]  # (B,L,C,N)
    a_bar = np.exp(da)
    phi = _phi(da)
    b_bar = phi * delta.data[:, :, :, None] * bt.data[:, :, None, :]
    bx = b_bar * x.data[:, :, :, None]
    hs = np.empty((b_sz, length, c_sz, n))
    h = np.zeros((b_sz, c_sz, n))
    for t in range(length):
        h = a_bar[:, t] * h + bx[:, t]
        hs[:, t] = h
    y = np.einsum("blcn,bln->blc", hs, ct.data) + d.data[None, None, :] * x.data

    def backward(gy):
        ct.accumulate_grad(np.einsum("blcn,blc->bln", hs, gy))
        d.accumulate_grad(np.einsum("blc,blc->c", gy, x.data))
        ghs = gy[:, :, :, None] * ct.data[:, :, None, :]
        dbx = np.empty_like(hs)
        dh = np.zeros((b_sz, c_sz, n))
        for t in range(length - 1, -1, -1):
            dh = dh + ghs[:, t]
            dbx[:, t] = dh
            dh = dh * a_bar[:, t]
        ga_bar = np.zeros_like(hs)
        if length > 1:
            ga_bar[:, 1:] = dbx[:, 1:] * hs[:, :-1]
        gb_bar = dbx * x.data[:, :, :, None]
        x.accumulate_grad(np.einsum("blcn,blcn->blc", dbx, b_bar) + gy * d.data)
        gphi = gb_bar * delta.data[:, :, :, None] * bt.data[:, :, None, :]
        bt.accumulate_grad((gb_bar * phi * delta.data[:, :, :, None]).sum(axis=2))
        gda = ga_bar * a_bar + gphi * _phi_prime(da)
        delta.accumulate_grad(
            (gb_bar * phi * bt.data[:, :, None, :]).sum(axis=3)
            + (gda * a.data[None, None, :, :]).sum(axis=3)
        )
        a.accumulate_grad(np.einsum("blcn,blc->cn", gda, delta.data))

    return _node(y, (x, delta, bt, ct, a, d), backward)


def selective_scan(x, proj):
    """Input-dependent scan over (B, L, C) sequences.

    The per-step timescale/input/readout maps come from ``proj``; the
    recurrence applies ZOH discretization at every step, so freezing the
    projections to constants reproduces ``ssm_scan_lti`` exactly.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"expected (B, L, C) input, got {x.data.shape}")
    if x.data.shape[2] != proj.channels:
        raise DimensionError(
            f"input has {x.data.shape[2]} channels, params expect {proj.channels}"
        )
    delta = softplus(linear(x, proj.w_delta, proj.b_delta))
    if not np.all(np.isfinite(delta.data)):
        raise NumericError("selective scan produced non-finite timescales")
    bt = linear(x, proj.w_b, proj.b_b)
    ct = linear(x, proj.w_c, proj.b_c)
    return _selective_scan_core(x, delta, bt, ct, proj.a, proj.d)


class ScanDirection(Enum):
    """The four raster orderings used to serialize an H x W grid."""

    ROW_FORWARD = "row-forward"
    ROW_REVERSE = "row-reverse"
    COL_FORWARD = "col-forward"
    COL_REVERSE = "col-reverse"


DIRECTIONS = (
    ScanDirection.ROW_FORWARD,
    ScanDirection.ROW_REVERSE,
    ScanDirection.COL_FORWARD,
    ScanDirection.COL_REVERSE,
)


def unfold_direction(x, direction):
    """Serialize (B, C, H, W) into (B, C, H*W) along the given raster order."""
    b, c, h, w = x.data.shape
    if direction in (ScanDirection.COL_FORWARD, ScanDirection.COL_REVERSE):
        x = permute(x, (0, 1, 3, 2))
    seq = reshape(x, (b, c, h * w))
    if direction in (ScanDirection.ROW_REVERSE, ScanDirection.COL_REVERSE):
        seq = flip(seq, 2)
    return seq


def fold_direction(seq, direction, h, w):
    """Inverse of :func:`unfold_direction` back onto the (h, w) grid."""
    b, c, length = seq.data.shape
    if length != h * w:
        raise DimensionError(f"sequence length {length} != {h}*{w}")
    if direction in (ScanDirection.ROW_REVERSE, ScanDirection.COL_REVERSE):
        seq = flip(seq, 2)
    if direction in (ScanDirection.COL_FORWARD, ScanDirection.COL_REVERSE):
        return permute(reshape(seq, (b, c, w, h)), (0, 1, 3, 2))
    return reshape(seq, (b, c, h, w))


def scan_2d(x, scan_fns):
    """Average the four directional scans of a (B, C, H, W) feature map.

    ``scan_fns`` supplies one (B, C, L) -> (B, C, L) sequence map per entry
    of :data:`DIRECTIONS`. The summation order over directions is fixed.
    """
    scan_fns = tuple(scan_fns)
    if len(scan_fns) != len(DIRECTIONS):
        raise ArgumentError(f"scan_2d needs {len(DIRECTIONS)} scan functions")
    _, _, h, w = x.data.shape
    total = None
    for direction, fn in zip(DIRECTIONS, scan_fns):
        folded = fold_direction(fn(unfold_direction(x, direction)), direction, h, w)
        total = folded if total is None else total + folded
    return scale(total, 1.0 / len(DIRECTIONS))
