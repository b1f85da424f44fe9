"""Overfit a tiny model on one synthetic pair and beat the bicubic baseline.

Takes ~20 seconds on one CPU core. Run from the repository root:

    python3 demos/04_train_tiny_model.py
"""

from pathlib import Path

import numpy as np

from irsr.data import ImageBuffer, make_synthetic_dataset, save_image
from irsr.model import ModelConfig
from irsr.training import TrainConfig, evaluate_bicubic, evaluate_model, super_resolve, train

out_dir = Path("runs/demo_tiny")
dataset = make_synthetic_dataset(1, 32, seed=0, scale=2)
print("dataset: 1 pair, LR 16x16 -> HR 32x32")

train_cfg = TrainConfig(
    lr=5e-3, batch=1, iterations=500, seed=0, lambda_loss=0.1, scale=2,
    patch_lr=16, patch_stride=16, checkpoint_interval=250,
)
model_cfg = ModelConfig(
    scale=2, in_channels=1, cf=4, d_emb=8, n_groups=1, n_blocks=1, state_dim=2, expand=2
)

result = train(train_cfg, model_cfg, dataset, out_dir=out_dir, log=print)

first, last = result.records[0], result.records[-1]
print(f"\nL1 loss: {first[1]:.5f} -> {last[1]:.5f}  ({last[1] / first[1]:.1%} of start)")

trained = evaluate_model(result.state, dataset)
baseline = evaluate_bicubic(dataset)
print(f"trained model PSNR {trained.psnr_mean:.2f} dB / SSIM {trained.ssim_mean:.4f}")
print(f"bicubic baseline PSNR {baseline.psnr_mean:.2f} dB / SSIM {baseline.ssim_mean:.4f}")
print(f"margin: {trained.psnr_mean - baseline.psnr_mean:+.2f} dB")

# Write the reconstruction next to the loss record for visual inspection.
sr = super_resolve(result.state, dataset.pairs[0].lr)
sr_img = ImageBuffer(
    data=np.rint(np.clip(sr, 0, 255)).astype(np.uint8), colorspace="gray"
)
save_image(sr_img, out_dir / "reconstruction.pgm")
save_image(dataset.pairs[0].hr, out_dir / "ground_truth.pgm")
print(f"\nwrote {out_dir}/reconstruction.pgm, ground_truth.pgm, loss_log.txt")
