"""Training objectives: pixel L1 plus a sequence-consistency term.

The consistency term runs one fixed (non-learnable) diagonal state-space
recurrence over the prediction and the target along the four raster
orderings of the image grid, assembles each direction's per-step outputs
back onto the grid, averages the four assembled maps, and penalizes the
mean squared difference between the two branches, weighted by ``lam``.

Because both branches share the same recurrence parameters, identical
inputs give exactly zero loss; the target branch is detached so gradients
flow only into the prediction.

The per-direction aggregation lives in :func:`_aggregate_direction` on its
own: the alternative reading (collapse each direction to a scalar sum and
broadcast it back) can be swapped there without touching anything else.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .ssm import DIRECTIONS, SsmParams, fold_direction, ssm_scan_lti, unfold_direction
from .tensor import Tensor, absolute, mean_all, mul, scale, sub

__all__ = [
    "LossSsmParams",
    "semantic_consistency_loss",
    "l1_pixel_loss",
    "total_loss",
]


@dataclass
class LossSsmParams:
    """Fixed recurrence parameters shared by both branches of the loss."""

    ssm: SsmParams

    def __post_init__(self):
        if np.any(np.abs(self.ssm.a_bar.data) >= 1.0):
            raise NumericError("loss recurrence must be strictly stable (|a_bar| < 1)")

    @classmethod
    def default(cls, channels, state_dim=4):
        """Deterministic defaults: A = -1, delta = 0.1, B = C = 1, D = 0."""
        a = Tensor(np.full((channels, state_dim), -1.0))
        b = Tensor(np.ones((channels, state_dim)))
        c = Tensor(np.ones((channels, state_dim)))
        d = Tensor(np.zeros(channels))
        delta = Tensor(np.full(channels, 0.1))
        return cls(SsmParams.from_continuous(a, b, c, d, delta))


def _aggregate_direction(y_seq, direction, h, w):
    """Assemble a direction's per-step outputs back onto the (h, w) grid."""
    return fold_direction(y_seq, direction, h, w)


def _scanned_average(x, params, h, w):
    total = None
    for direction in DIRECTIONS:
        y = ssm_scan_lti(params, unfold_direction(x, direction))
        folded = _aggregate_direction(y, direction, h, w)
        total = folded if total is None else total + folded
    return scale(total, 1.0 / len(DIRECTIONS))


def semantic_consistency_loss(pred, target, lam, params=None):
    """Weighted mean squared difference of direction-averaged scan outputs.

    ``pred`` and ``target`` are (B, C, H, W); the target branch is detached.
    """
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"prediction {pred.data.shape} and target {target.data.shape} differ"
        )
    if pred.data.ndim != 4:
        raise DimensionError(f"expected (B, C, H, W) inputs, got {pred.data.shape}")
    if not (np.all(np.isfinite(pred.data)) and np.all(np.isfinite(target.data))):
        raise NumericError("loss inputs must be finite")
    if params is None:
        params = LossSsmParams.default(pred.data.shape[1])

    h, w = pred.data.shape[2], pred.data.shape[3]
    y_pred = _scanned_average(pred, params.ssm, h, w)
    y_target = _scanned_average(Tensor(target.data), params.ssm, h, w)
    diff = sub(y_pred, y_target)
    return scale(mean_all(mul(diff, diff)), lam)


def l1_pixel_loss(pred, target):
    """Mean absolute difference; the target is detached."""
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"prediction {pred.data.shape} and target {target.data.shape} differ"
        )
    return mean_all(absolute(sub(pred, Tensor(target.data))))


def total_loss(pred, target, lam, params=None):
    """Pixel L1 plus the weighted consistency term."""
    return l1_pixel_loss(pred, target) + semantic_consistency_loss(pred, target, lam, params)
