"""Haar subbands, perfect reconstruction, and the feature modulation block.

Run from the repository root:  python3 demos/03_wavelet_modulation.py
"""

import numpy as np

from irsr.data import make_synthetic_dataset
from irsr.model import ModelConfig, init_model
from irsr.tensor import Tensor
from irsr.wavelet import dwt2_haar, idwt2_haar, wtfm_forward

# --- subbands of a synthetic infrared-like image ---------------------------
pair = make_synthetic_dataset(1, 64, seed=7).pairs[0]
img = Tensor(pair.hr.data.astype(np.float64)[None])  # (1, 1, 64, 64)
bands = dwt2_haar(img)
print("input 64x64 ->  subband shapes:", bands.ca.shape)
for label, band in [("cA", bands.ca), ("cH", bands.ch), ("cV", bands.cv), ("cD", bands.cd)]:
    print(f"  {label}: energy {float((band.data ** 2).sum()):12.1f}")

total = sum(float((b.data ** 2).sum()) for b in (bands.ca, bands.ch, bands.cv, bands.cd))
print(f"energy in {float((img.data ** 2).sum()):.1f} == energy out {total:.1f}")

back = idwt2_haar(bands)
print(f"perfect reconstruction: max |idwt(dwt(x)) - x| = {np.max(np.abs(back.data - img.data)):.2e}")

# --- hand values for one 2x2 block -----------------------------------------
block = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
b = dwt2_haar(block)
print("block [[1,2],[3,4]] -> ca, ch, cv, cd =",
      [float(t.data) for t in (b.ca, b.ch, b.cv, b.cd)])

# --- the modulation block at work -------------------------------------------
state = init_model(ModelConfig(scale=2, cf=8, d_emb=16, n_groups=1, n_blocks=1, state_dim=2), seed=0)
x = Tensor(pair.lr.data.astype(np.float64)[None] / 255.0)
feats = wtfm_forward(x, state.wtfm)
print("modulation block on a 32x32 input:")
print("  small-receptive-field map:", feats.f.shape)
print("  large-receptive-field map:", feats.f_prime.shape)
print("  modulated map:            ", feats.f_mod.shape)
print("  concat:                   ", feats.f_combined.shape)
print("  fused to backbone width:  ", feats.fused.shape)
