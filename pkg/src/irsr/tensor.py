"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous row-major numpy array. Operations on
tensors that require gradients record a node on an implicit tape (the
``_parents`` / ``_backward`` links); calling :meth:`Tensor.backward` on a
scalar result replays the tape in reverse topological order exactly once,
accumulating gradients additively into every tensor that requested them.
The tape is freed afterwards, so each forward pass owns its own graph.

Activations follow the NCHW convention. Binary elementwise operations accept
equal shapes or a scalar second operand only; any other broadcast must be an
explicit reshape. This keeps oracle comparisons in the test suite unambiguous.
"""

import numpy as np

from .errors import ArgumentError, DimensionError

__all__ = [
    "Tensor",
    "Parameter",
    "pointwise",
    "add",
    "sub",
    "mul",
    "scale",
    "channel_scale",
    "silu",
    "sigmoid",
    "softplus",
    "absolute",
    "sum_all",
    "mean_all",
    "linear",
    "conv2d",
    "layer_norm",
    "pixel_shuffle",
    "pixel_unshuffle",
    "reshape",
    "permute",
    "flip",
    "concat",
    "nearest_upsample2",
    "bilinear_upsample",
    "check_gradients",
]


def _as_f64(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """N-dimensional float64 array with an optional gradient tape node.

    ``grad`` stays ``None`` until a backward pass deposits something. Leaf
    tensors created with ``requires_grad=True`` keep their gradient after
    ``backward()``; intermediate nodes are released together with the tape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ArgumentError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """Copy of this tensor cut off from the tape."""
        return Tensor(self.data.copy())

    def accumulate_grad(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse-mode sweep from a scalar root; frees the tape afterwards."""
        if self.data.size != 1:
            raise ArgumentError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        # Tape is single-use: drop links and intermediate grads.
        for node in topo:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node.grad = None

    # Operator sugar; all routed through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A named leaf tensor that participates in training.

    ``name`` is a stable dotted path (e.g. ``"groups.0.blocks.1.scale"``);
    checkpoints and optimizer state are keyed by it.
    """

    __slots__ = ("name", "tensor")

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = _as_f64(value)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _node(data, parents, backward):
    """Build an output tensor, taping it only if some parent needs gradients."""
    out = Tensor(data)
    tracked = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


def _coerce_operand(other):
    """Return (array, is_scalar, tensor_or_none) for a binary op's RHS."""
    if isinstance(other, Tensor):
        return other.data, other.data.ndim == 0, other
    arr = np.asarray(other, dtype=np.float64)
    if arr.ndim != 0:
        raise DimensionError("non-tensor operand must be a scalar")
    return arr, True, None


def _check_binary_shapes(a, b_data, b_is_scalar):
    if not b_is_scalar and a.data.shape != b_data.shape:
        raise DimensionError(
            f"elementwise operands must have equal shapes or a scalar second "
            f"operand, got {a.data.shape} vs {b_data.shape}"
        )


def add(a, b):
    b_data, b_scalar, b_t = _coerce_operand(b)
    _check_binary_shapes(a, b_data, b_scalar)
    data = a.data + b_data

    def backward(g):
        a.accumulate_grad(g)
        if b_t is not None:
            b_t.accumulate_grad(g.sum() if b_scalar else g)

    return _node(data, (a, b_t), backward)


def sub(a, b):
    b_data, b_scalar, b_t = _coerce_operand(b)
    _check_binary_shapes(a, b_data, b_scalar)
    data = a.data - b_data

    def backward(g):
        a.accumulate_grad(g)
        if b_t is not None:
            b_t.accumulate_grad(-(g.sum()) if b_scalar else -g)

    return _node(data, (a, b_t), backward)


def mul(a, b):
    b_data, b_scalar, b_t = _coerce_operand(b)
    _check_binary_shapes(a, b_data, b_scalar)
    data = a.data * b_data
    a_data = a.data

    def backward(g):
        a.accumulate_grad(g * b_data)
        if b_t is not None:
            gb = g * a_data
            b_t.accumulate_grad(gb.sum() if b_scalar else gb)

    return _node(data, (a, b_t), backward)


def scale(a, s):
    s = float(s)
    data = a.data * s

    def backward(g):
        a.accumulate_grad(g * s)

    return _node(data, (a,), backward)


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accumulate_grad(g * data * (1.0 - data))

    return _node(data, (a,), backward)


def silu(a):
    """x * sigmoid(x)."""
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig
    a_data = a.data

    def backward(g):
        a.accumulate_grad(g * sig * (1.0 + a_data * (1.0 - sig)))

    return _node(data, (a,), backward)


def softplus(a):
    data = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accumulate_grad(g * sig)

    return _node(data, (a,), backward)


def absolute(a):
    data = np.abs(a.data)
    sign = np.sign(a.data)

    def backward(g):
        a.accumulate_grad(g * sign)

    return _node(data, (a,), backward)


_POINTWISE_UNARY = {"silu": silu, "sigmoid": sigmoid}
_POINTWISE_BINARY = {"add": add, "mul": mul, "sub": sub}


def pointwise(x, kind, other=None):
    """Dispatch table for the elementwise operations.

    ``kind`` is one of ``silu``, ``sigmoid``, ``add``, ``mul``, ``sub``,
    ``scale`` (scalar multiply). Binary kinds require equal shapes or a
    scalar ``other``.
    """
    if kind in _POINTWISE_UNARY:
        return _POINTWISE_UNARY[kind](x)
    if kind in _POINTWISE_BINARY:
        if other is None:
            raise ArgumentError(f"pointwise kind {kind!r} needs a second operand")
        return _POINTWISE_BINARY[kind](x, other)
    if kind in ("scale", "scale-by-scalar"):
        if other is None:
            raise ArgumentError("pointwise 'scale' needs a scalar factor")
        return scale(x, other)
    raise ArgumentError(f"unknown pointwise kind {kind!r}")


def channel_scale(x, s):
    """Scale the last axis by a per-channel vector: ``y[..., c] = x[..., c] * s[c]``."""
    c = x.data.shape[-1]
    if s.data.shape != (c,):
        raise DimensionError(f"scale vector must have shape ({c},)")
    data = x.data * s.data
    x_data = x.data

    def backward(g):
        x.accumulate_grad(g * s.data)
        s.accumulate_grad((g * x_data).reshape(-1, c).sum(axis=0))

    return _node(data, (x, s), backward)


def sum_all(a):
    data = np.array(a.data.sum())

    def backward(g):
        a.accumulate_grad(np.full_like(a.data, float(g)))

    return _node(data, (a,), backward)


def mean_all(a):
    n = a.data.size
    data = np.array(a.data.mean())

    def backward(g):
        a.accumulate_grad(np.full_like(a.data, float(g) / n))

    return _node(data, (a,), backward)


def linear(x, weight, bias=None):
    """Affine map over the last axis: ``y[..., o] = sum_i x[..., i] w[o, i] + b[o]``."""
    if weight.data.ndim != 2:
        raise DimensionError(f"linear weight must be 2-D, got {weight.data.shape}")
    d_out, d_in = weight.data.shape
    if x.data.shape[-1] != d_in:
        raise DimensionError(
            f"linear input last axis {x.data.shape[-1]} != weight in-dim {d_in}"
        )
    if bias is not None and bias.data.shape != (d_out,):
        raise DimensionError(f"linear bias must have shape ({d_out},)")

    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data
    x_data = x.data

    def backward(g):
        x.accumulate_grad(g @ weight.data)
        g2 = g.reshape(-1, d_out)
        weight.accumulate_grad(g2.T @ x_data.reshape(-1, d_in))
        if bias is not None:
            bias.accumulate_grad(g2.sum(axis=0))

    return _node(data, (x, weight, bias), backward)


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """2-D cross-correlation with zero padding.

    ``x`` is (B, Cin, H, W), ``weight`` is (Cout, Cin/groups, kh, kw). Output
    spatial dims follow ``(H + 2*padding - kh) // stride + 1``.
    """
    stride = int(stride)
    padding = int(padding)
    groups = int(groups)
    if stride <= 0:
        raise ArgumentError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ArgumentError(f"padding must be >= 0, got {padding}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and weight")
    b_sz, c_in, h, w = x.data.shape
    c_out, c_in_g, kh, kw = weight.data.shape
    if c_in % groups != 0 or c_out % groups != 0:
        raise DimensionError(
            f"channel counts ({c_in} in, {c_out} out) must divide by groups={groups}"
        )
    if c_in_g != c_in // groups:
        raise DimensionError(
            f"weight expects {c_in_g} channels per group, input provides {c_in // groups}"
        )
    if bias is not None and bias.data.shape != (c_out,):
        raise DimensionError(f"conv2d bias must have shape ({c_out},)")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise DimensionError(
            f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xg = xp.reshape(b_sz, groups, c_in_g, xp.shape[2], xp.shape[3])
    wg = weight.data.reshape(groups, c_out // groups, c_in_g, kh, kw)

    out = np.zeros((b_sz, groups, c_out // groups, h_out, w_out))
    for i in range(kh):
        for j in range(kw):
            xs = xg[:, :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
            out += np.einsum("goc,bgchw->bgohw", wg[:, :, :, i, j], xs)
    out = out.reshape(b_sz, c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gg = g.reshape(b_sz, groups, c_out // groups, h_out, w_out)
        if bias is not None:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        gw = np.zeros_like(wg)
        gxp = np.zeros_like(xg)
        for i in range(kh):
            for j in range(kw):
                xs = xg[:, :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
                gw[:, :, :, i, j] = np.einsum("bgohw,bgchw->goc", gg, xs)
                gxp[:, :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                    np.einsum("goc,bgohw->bgchw", wg[:, :, :, i, j], gg)
                )
        weight.accumulate_grad(gw.reshape(weight.data.shape))
        gx = gxp.reshape(b_sz, c_in, xp.shape[2], xp.shape[3])
        if padding > 0:
            gx = gx[:, :, padding : padding + h, padding : padding + w]
        x.accumulate_grad(gx)

    return _node(out, (x, weight, bias), backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis, then apply the per-channel affine."""
    if eps <= 0:
        raise ArgumentError("layer_norm eps must be > 0")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")

    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    data = xhat * gamma.data + beta.data

    def backward(g):
        gxh = g * gamma.data
        m1 = gxh.mean(axis=-1, keepdims=True)
        m2 = (gxh * xhat).mean(axis=-1, keepdims=True)
        x.accumulate_grad((gxh - m1 - xhat * m2) * inv_std)
        lead = tuple(range(g.ndim - 1))
        gamma.accumulate_grad((g * xhat).sum(axis=lead))
        beta.accumulate_grad(g.sum(axis=lead))

    return _node(data, (x, gamma, beta), backward)


def pixel_shuffle(x, r):
    """Depth-to-space: (B, C*r*r, H, W) -> (B, C, H*r, W*r)."""
    r = int(r)
    if r < 1:
        raise ArgumentError(f"upscale factor must be >= 1, got {r}")
    b, c_full, h, w = x.data.shape
    if c_full % (r * r) != 0:
        raise ArgumentError(f"channel count {c_full} not divisible by r^2={r * r}")
    c = c_full // (r * r)
    data = (
        x.data.reshape(b, c, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, c, h * r, w * r)
    )

    def backward(g):
        gx = (
            g.reshape(b, c, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, c_full, h, w)
        )
        x.accumulate_grad(gx)

    return _node(data, (x,), backward)


def pixel_unshuffle(x, r):
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    r = int(r)
    if r < 1:
        raise ArgumentError(f"downscale factor must be >= 1, got {r}")
    b, c, hr, wr = x.data.shape
    if hr % r != 0 or wr % r != 0:
        raise ArgumentError(f"spatial dims {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    data = (
        x.data.reshape(b, c, h, r, w, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, c * r * r, h, w)
    )

    def backward(g):
        gx = (
            g.reshape(b, c, r, r, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, c, hr, wr)
        )
        x.accumulate_grad(gx)

    return _node(data, (x,), backward)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    orig = x.data.shape
    data = x.data.reshape(shape)

    def backward(g):
        x.accumulate_grad(g.reshape(orig))

    return _node(data, (x,), backward)


def permute(x, axes):
    axes = tuple(int(a) for a in axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        x.accumulate_grad(g.transpose(inv))

    return _node(data, (x,), backward)


def flip(x, axis):
    axis = int(axis)
    data = np.ascontiguousarray(np.flip(x.data, axis=axis))

    def backward(g):
        x.accumulate_grad(np.flip(g, axis=axis))

    return _node(data, (x,), backward)


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    axis = int(axis)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t.accumulate_grad(piece)

    return _node(data, tuple(tensors), backward)


def nearest_upsample2(x):
    """Nearest-neighbor x2 spatial upsampling of an NCHW tensor."""
    b, c, h, w = x.data.shape
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        x.accumulate_grad(g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _node(data, (x,), backward)


def _linear_interp_coeffs(n_in, factor):
    """Per-output gather indices and weights, half-pixel-center convention."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    w0 = 1.0 - w1
    return i0, i1, w0, w1


def bilinear_upsample(x, factor):
    """Bilinear x`factor` spatial upsampling of an NCHW tensor."""
    factor = int(factor)
    if factor < 1:
        raise ArgumentError(f"upsample factor must be >= 1, got {factor}")
    b, c, h, w = x.data.shape
    hi0, hi1, hw0, hw1 = _linear_interp_coeffs(h, factor)
    wi0, wi1, ww0, ww1 = _linear_interp_coeffs(w, factor)

    rows = x.data[:, :, hi0, :] * hw0[None, None, :, None] + x.data[:, :, hi1, :] * hw1[None, None, :, None]
    data = rows[:, :, :, wi0] * ww0 + rows[:, :, :, wi1] * ww1

    def backward(g):
        g_rows = np.zeros((b, c, h * factor, w))
        np.add.at(g_rows.transpose(3, 0, 1, 2), wi0, (g * ww0).transpose(3, 0, 1, 2))
        np.add.at(g_rows.transpose(3, 0, 1, 2), wi1, (g * ww1).transpose(3, 0, 1, 2))
        gx = np.zeros((b, c, h, w))
        np.add.at(gx.transpose(2, 0, 1, 3), hi0, (g_rows * hw0[None, None, :, None]).transpose(2, 0, 1, 3))
        np.add.at(gx.transpose(2, 0, 1, 3), hi1, (g_rows * hw1[None, None, :, None]).transpose(2, 0, 1, 3))
        x.accumulate_grad(gx)

    return _node(data, (x,), backward)


def check_gradients(fn, point, step=1e-4):
    """Compare tape gradients against central finite differences.

    ``fn`` must map one tensor to a scalar tensor. Returns the maximum
    elementwise relative error ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, 1)``.
    """
    if step <= 0:
        raise ArgumentError("finite-difference step must be > 0")
    x = Tensor(point.data.copy(), requires_grad=True)
    out = fn(x)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ArgumentError("check_gradients requires a scalar-valued function")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    base = point.data.reshape(-1)

    def probe(i, offset):
        values = base.copy()
        values[i] += offset
        return fn(Tensor(values.reshape(point.data.shape))).item()

    fd = np.zeros_like(x.data)
    flat = fd.reshape(-1)
    for i in range(base.size):
        flat[i] = (probe(i, step) - probe(i, -step)) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
    return float(np.max(np.abs(analytic - fd) / denom))
