"""Tour of the float64 autodiff core: ops, the tape, and gradient checking.

Run from the repository root:  python3 demos/01_tensor_autodiff.py
"""

import numpy as np

from irsr.tensor import (
    Tensor,
    check_gradients,
    conv2d,
    mean_all,
    mul,
    pixel_shuffle,
    silu,
    sum_all,
)

rng = np.random.default_rng(0)

# --- forward + reverse pass on a tiny expression --------------------------
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = sum_all(mul(x, x))  # sum of squares
loss.backward()
print("d/dx sum(x^2) at [1,2,3]  ->", x.grad, "(expected [2, 4, 6])")

# --- a small conv pipeline, gradients verified against central finite
# differences --------------------------------------------------------------
image = Tensor(rng.normal(size=(1, 2, 6, 6)))
kernel = Tensor(rng.normal(size=(4, 2, 3, 3)))


def scalar_pipeline(t):
    feat = silu(conv2d(t, kernel, padding=1))  # (1, 4, 6, 6)
    pooled = mean_all(feat)
    return pooled


err = check_gradients(scalar_pipeline, image)
print(f"conv pipeline max relative gradient error: {err:.2e}")

# --- pixel shuffle is a pure permutation ----------------------------------
depth = Tensor(np.arange(16.0).reshape(1, 4, 2, 2))
spread = pixel_shuffle(depth, 2)
print("pixel_shuffle (1,4,2,2) -> ", spread.shape)

# --- shared subexpressions accumulate additively --------------------------
a = Tensor([2.0], requires_grad=True)
b = mul(a, a)          # used twice below
c = sum_all(b + b)
c.backward()
print("d/da 2*a^2 at a=2 ->", a.grad, "(expected [8])")
