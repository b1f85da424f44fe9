"""Reference metrics and the residual-error distribution report.

Run from the repository root:  python3 demos/05_metrics_and_residuals.py
"""

import numpy as np

from irsr.data import bicubic_resample, make_synthetic_dataset
from irsr.metrics import (
    RESIDUAL_BIN_LABELS,
    evaluate_pairs,
    psnr,
    residual_distribution,
    rgb_to_y,
    ssim,
)

rng = np.random.default_rng(4)

# --- fixtures ---------------------------------------------------------------
print(f"psnr for a single off-by-one pixel at peak 255: {psnr(np.array([[254.0]]), np.array([[255.0]])):.4f} dB")
x = rng.uniform(0, 255, size=(16, 16))
print(f"ssim of an image with itself: {ssim(x, x.copy())}")
print(f"luminance of pure white: {rgb_to_y(np.full((3, 1, 1), 255.0))[0, 0, 0]:.6f}")

# --- residual bins ----------------------------------------------------------
gt = np.zeros(6)
sr = np.array([0.0, 3.0, 5.0, 9.9, 12.0, 40.0])
bins = residual_distribution(sr, gt)
print("\nresiduals [0, 3, 5, 9.9, 12, 40] land in bins:")
for label, frac in zip(RESIDUAL_BIN_LABELS, bins):
    print(f"  {label:<18} {frac:.1%}")

# --- scoring bicubic upsampling over a small synthetic set -------------------
dataset = make_synthetic_dataset(4, 64, seed=11, scale=2)
triples = []
for pair in dataset:
    up = bicubic_resample(pair.lr, pair.hr.height, pair.hr.width)
    triples.append((pair.name, up.data.astype(float), pair.hr.data.astype(float)))
report = evaluate_pairs(triples)
print("\nbicubic x2 on 4 synthetic pairs:")
print(report.to_table())
print("\nmachine-readable summary:")
print(report.to_keyvalues())
