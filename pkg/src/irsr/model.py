"""The super-resolution model: shallow wavelet-modulated features, grouped
residual state-space blocks, and a pixel-shuffle reconstruction tail.

Layout, bottom to top:

* shallow stage: :func:`irsr.wavelet.wtfm_forward` lifts the input image to
  the backbone width,
* body: ``n_groups`` groups, each ``n_blocks`` residual blocks (LayerNorm +
  gated selective-scan module + learnable per-channel skip scale) followed
  by a 3x3 convolution and a group-level residual,
* tail: one conv + x2 pixel shuffle per doubling of resolution, a final 3x3
  conv back to image channels, plus a bilinear global skip of the input
  (so a zero-initialized final conv starts the model at plain bilinear
  upsampling).

The body runs on (B, H*W, C) sequences; the (H, W) pair travels alongside as
explicit metadata because the directional scans and the depth-wise
convolution need the grid shape back.

Parameters live in an ordered name -> :class:`~irsr.tensor.Parameter` map
with stable dotted names, which is also the checkpoint schema: a text
manifest (name, shape, byte offset) followed by one little-endian float64
blob.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import ArgumentError, DimensionError
from .ssm import SelectiveScanParams, scan_2d, selective_scan
from .tensor import (
    Parameter,
    Tensor,
    bilinear_upsample,
    channel_scale,
    conv2d,
    layer_norm,
    linear,
    mul,
    permute,
    pixel_shuffle,
    reshape,
    silu,
)
from .wavelet import WtfmParams, wtfm_forward

__all__ = [
    "ModelConfig",
    "ModelState",
    "init_model",
    "vssm_forward",
    "rssb_forward",
    "model_forward",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

_CKPT_MAGIC = b"SSM-CKPT-1"


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``expand`` is the channel expansion factor inside each state-space
    module; ``lambda_loss`` is the weight of the sequence-consistency loss
    term and rides along here so checkpoints are self-describing.
    """

    scale: int = 2
    in_channels: int = 1
    cf: int = 8
    d_emb: int = 32
    n_groups: int = 4
    n_blocks: int = 2
    state_dim: int = 8
    expand: int = 2
    lambda_loss: float = 0.1
    global_skip: bool = True
    gate: str = "silu"

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ArgumentError(f"scale must be 2 or 4, got {self.scale}")
        for name in ("in_channels", "cf", "d_emb", "n_groups", "n_blocks", "state_dim", "expand"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.gate not in ("silu", "sigmoid"):
            raise ArgumentError(f"gate must be 'silu' or 'sigmoid', got {self.gate!r}")

    def to_lines(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name} = {v}")
        return out

    @classmethod
    def from_items(cls, items):
        kwargs = {}
        field_types = {f.name: f.type for f in fields(cls)}
        for key, value in items:
            if key not in field_types:
                raise ArgumentError(f"unknown model config key {key!r}")
            t = field_types[key]
            if t in (bool, "bool"):
                kwargs[key] = value.strip().lower() == "true"
            elif t in (int, "int"):
                kwargs[key] = int(value)
            elif t in (float, "float"):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value.strip()
        return cls(**kwargs)


@dataclass
class VssmWeights:
    w_in: Tensor
    b_in: Tensor
    dw_w: Tensor
    dw_b: Tensor
    scans: list  # one SelectiveScanParams per scan direction
    ln_g: Tensor
    ln_b: Tensor
    w_gate: Tensor
    b_gate: Tensor
    w_out: Tensor
    b_out: Tensor


@dataclass
class BlockWeights:
    norm_g: Tensor
    norm_b: Tensor
    vssm: VssmWeights
    scale: Tensor


@dataclass
class GroupWeights:
    blocks: list
    conv_w: Tensor
    conv_b: Tensor


@dataclass
class TailWeights:
    ups: list  # (weight, bias) per x2 stage
    final_w: Tensor
    final_b: Tensor


class ModelState:
    """Config plus the named parameter collection and structured views."""

    def __init__(self, config, params, wtfm, groups, tail):
        self.config = config
        self.params = params
        self.wtfm = wtfm
        self.groups = groups
        self.tail = tail

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def total_parameters(self):
        return sum(p.tensor.size for p in self.params.values())


class _Builder:
    """Creates named parameters in a deterministic order."""

    def __init__(self, rng):
        self.rng = rng
        self.params = {}

    def raw(self, name, data):
        if name in self.params:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self.params[name] = p
        return p.tensor

    def uniform(self, name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return self.raw(name, self.rng.uniform(-bound, bound, size=shape))

    def conv(self, name, shape):
        return self.uniform(name, shape, int(np.prod(shape[1:])))

    def dense(self, name, shape):
        return self.uniform(name, shape, shape[1])

    def const(self, name, shape, value):
        return self.raw(name, np.full(shape, float(value)))


def _init_scan(b, prefix, channels, n):
    # Timescales start log-uniform in [1e-3, 1e-1]; the continuous diagonal
    # decays faster for higher state indices; feed-through starts at 1.
    delta0 = np.exp(b.rng.uniform(np.log(1e-3), np.log(1e-1), size=channels))
    return SelectiveScanParams(
        w_delta=b.dense(f"{prefix}.w_delta", (channels, channels)),
        b_delta=b.raw(f"{prefix}.b_delta", np.log(np.expm1(delta0))),
        w_b=b.dense(f"{prefix}.w_b", (n, channels)),
        b_b=b.const(f"{prefix}.b_b", (n,), 0.0),
        w_c=b.dense(f"{prefix}.w_c", (n, channels)),
        b_c=b.const(f"{prefix}.b_c", (n,), 0.0),
        a=b.raw(f"{prefix}.a", -np.tile(np.arange(1.0, n + 1.0), (channels, 1))),
        d=b.const(f"{prefix}.d", (channels,), 1.0),
    )


def _init_vssm(b, prefix, d_model, d_inner, n):
    return VssmWeights(
        w_in=b.dense(f"{prefix}.in.w", (d_inner, d_model)),
        b_in=b.const(f"{prefix}.in.b", (d_inner,), 0.0),
        dw_w=b.conv(f"{prefix}.dwconv.w", (d_inner, 1, 3, 3)),
        dw_b=b.const(f"{prefix}.dwconv.b", (d_inner,), 0.0),
        scans=[_init_scan(b, f"{prefix}.scan.{k}", d_inner, n) for k in range(4)],
        ln_g=b.const(f"{prefix}.norm.gamma", (d_inner,), 1.0),
        ln_b=b.const(f"{prefix}.norm.beta", (d_inner,), 0.0),
        w_gate=b.dense(f"{prefix}.gate.w", (d_inner, d_model)),
        b_gate=b.const(f"{prefix}.gate.b", (d_inner,), 0.0),
        w_out=b.dense(f"{prefix}.out.w", (d_model, d_inner)),
        b_out=b.const(f"{prefix}.out.b", (d_model,), 0.0),
    )


def init_model(config, seed=0):
    """Build a freshly initialized :class:`ModelState`."""
    rng = np.random.default_rng(seed)
    b = _Builder(rng)
    cf, d, n = config.cf, config.d_emb, config.state_dim
    d_inner = d * config.expand

    wtfm = WtfmParams(
        conv3_w=b.conv("wtfm.conv3.w", (cf, config.in_channels, 3, 3)),
        conv3_b=b.const("wtfm.conv3.b", (cf,), 0.0),
        conv7_w=b.conv("wtfm.conv7.w", (cf, config.in_channels, 7, 7)),
        conv7_b=b.const("wtfm.conv7.b", (cf,), 0.0),
        mod1_w=b.conv("wtfm.mod1.w", (cf, 4 * cf, 3, 3)),
        mod1_b=b.const("wtfm.mod1.b", (cf,), 0.0),
        mod2_w=b.conv("wtfm.mod2.w", (cf, cf, 3, 3)),
        mod2_b=b.const("wtfm.mod2.b", (cf,), 0.0),
        fuse_w=b.conv("wtfm.fuse.w", (d, 3 * cf, 1, 1)),
        fuse_b=b.const("wtfm.fuse.b", (d,), 0.0),
        gate=config.gate,
    )

    groups = []
    for g in range(config.n_groups):
        blocks = []
        for k in range(config.n_blocks):
            prefix = f"groups.{g}.blocks.{k}"
            blocks.append(
                BlockWeights(
                    norm_g=b.const(f"{prefix}.norm.gamma", (d,), 1.0),
                    norm_b=b.const(f"{prefix}.norm.beta", (d,), 0.0),
                    vssm=_init_vssm(b, f"{prefix}.vssm", d, d_inner, n),
                    scale=b.const(f"{prefix}.scale", (d,), 1.0),
                )
            )
        groups.append(
            GroupWeights(
                blocks=blocks,
                conv_w=b.conv(f"groups.{g}.conv.w", (d, d, 3, 3)),
                conv_b=b.const(f"groups.{g}.conv.b", (d,), 0.0),
            )
        )

    n_stages = {2: 1, 4: 2}[config.scale]
    ups = []
    for i in range(n_stages):
        ups.append(
            (
                b.conv(f"tail.up.{i}.w", (4 * d, d, 3, 3)),
                b.const(f"tail.up.{i}.b", (4 * d,), 0.0),
            )
        )
    tail = TailWeights(
        ups=ups,
        final_w=b.const("tail.final.w", (config.in_channels, d, 3, 3), 0.0),
        final_b=b.const("tail.final.b", (config.in_channels,), 0.0),
    )

    return ModelState(config, b.params, wtfm, groups, tail)


def _seq_to_image(x, h, w):
    b, length, c = x.data.shape
    return reshape(permute(x, (0, 2, 1)), (b, c, h, w))


def _image_to_seq(x):
    b, c, h, w = x.data.shape
    return permute(reshape(x, (b, c, h * w)), (0, 2, 1))


def vssm_forward(x, weights, h, w):
    """Gated state-space module over a (B, L, C) sequence with grid (h, w).

    Primary path: channel expansion, depth-wise 3x3 conv on the grid, SiLU,
    four-direction selective scan, LayerNorm. Gate path: channel expansion
    plus SiLU. The elementwise product is projected back to C channels.
    """
    b_sz, length, _ = x.data.shape
    if h * w != length:
        raise ArgumentError(f"spatial metadata {h}x{w} inconsistent with L={length}")
    d_inner = weights.w_in.data.shape[0]

    u = linear(x, weights.w_in, weights.b_in)
    v = conv2d(_seq_to_image(u, h, w), weights.dw_w, weights.dw_b, padding=1, groups=d_inner)
    v = silu(v)

    def scan_fn(proj):
        def run(seq):  # (B, C, L) <-> the (B, L, C) contract of selective_scan
            return permute(selective_scan(permute(seq, (0, 2, 1)), proj), (0, 2, 1))

        return run

    s = scan_2d(v, [scan_fn(p) for p in weights.scans])
    x1 = layer_norm(_image_to_seq(s), weights.ln_g, weights.ln_b)
    x2 = silu(linear(x, weights.w_gate, weights.b_gate))
    return linear(mul(x1, x2), weights.w_out, weights.b_out)


def rssb_forward(f, block, h, w):
    """Residual block: normalized state-space module plus a scaled skip."""
    z = vssm_forward(layer_norm(f, block.norm_g, block.norm_b), block.vssm, h, w)
    return z + channel_scale(f, block.scale)


def _group_forward(f, group, h, w):
    z = f
    for block in group.blocks:
        z = rssb_forward(z, block, h, w)
    z = _image_to_seq(conv2d(_seq_to_image(z, h, w), group.conv_w, group.conv_b, padding=1))
    return f + z


def model_forward(lr_image, state):
    """Super-resolve a (B, C, H, W) image tensor by the configured factor."""
    cfg = state.config
    if lr_image.data.ndim != 4:
        raise DimensionError(f"expected (B, C, H, W) input, got {lr_image.data.shape}")
    _, c, h, w = lr_image.data.shape
    if c != cfg.in_channels:
        raise DimensionError(f"input has {c} channels, model expects {cfg.in_channels}")
    if h % 2 or w % 2:
        raise ArgumentError(f"input spatial dims must be even, got {h}x{w}")
    if h < 8 or w < 8:
        raise ArgumentError(f"input spatial dims must be >= 8, got {h}x{w}")

    feats = wtfm_forward(lr_image, state.wtfm).fused
    seq = _image_to_seq(feats)
    for group in state.groups:
        seq = _group_forward(seq, group, h, w)
    x = _seq_to_image(seq, h, w)

    for up_w, up_b in state.tail.ups:
        x = pixel_shuffle(conv2d(x, up_w, up_b, padding=1), 2)
    out = conv2d(x, state.tail.final_w, state.tail.final_b, padding=1)
    if cfg.global_skip:
        out = out + bilinear_upsample(lr_image, cfg.scale)
    return out


def param_count(config):
    """Total scalar parameter count implied by a config."""
    return init_model(config, seed=0).total_parameters()


def save_checkpoint(state, path):
    """Write config, manifest and one little-endian float64 blob."""
    lines = [_CKPT_MAGIC.decode()]
    cfg_lines = state.config.to_lines()
    lines.append(f"config {len(cfg_lines)}")
    lines.extend(cfg_lines)
    lines.append(f"params {len(state.params)}")
    offset = 0
    blobs = []
    for name, p in state.params.items():
        shape = ",".join(str(s) for s in p.tensor.shape)
        lines.append(f"{name}\t{shape}\t{offset}")
        raw = p.tensor.data.astype("<f8").tobytes()
        blobs.append(raw)
        offset += len(raw)
    lines.append(f"data {offset}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Rebuild a :class:`ModelState` from :func:`save_checkpoint` output."""
    with open(path, "rb") as fh:
        content = fh.read()
    head, sep, rest = content.partition(b"\n")
    if head != _CKPT_MAGIC or not sep:
        raise ArgumentError(f"{path}: not a checkpoint file")

    def next_line(buf):
        line, _, buf = buf.partition(b"\n")
        return line.decode(), buf

    line, rest = next_line(rest)
    tag, _, count = line.partition(" ")
    if tag != "config":
        raise ArgumentError(f"{path}: malformed checkpoint header")
    items = []
    for _ in range(int(count)):
        line, rest = next_line(rest)
        key, _, value = line.partition("=")
        items.append((key.strip(), value.strip()))
    config = ModelConfig.from_items(items)

    line, rest = next_line(rest)
    tag, _, count = line.partition(" ")
    if tag != "params":
        raise ArgumentError(f"{path}: malformed parameter manifest")
    manifest = []
    for _ in range(int(count)):
        line, rest = next_line(rest)
        name, shape_s, offset_s = line.split("\t")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        manifest.append((name, shape, int(offset_s)))

    line, blob = next_line(rest)
    tag, _, nbytes = line.partition(" ")
    if tag != "data" or len(blob) != int(nbytes):
        raise ArgumentError(f"{path}: truncated checkpoint blob")

    state = init_model(config, seed=0)
    seen = set()
    for name, shape, offset in manifest:
        if name not in state.params:
            raise ArgumentError(f"{path}: unknown parameter {name!r}")
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        p = state.params[name]
        if p.tensor.shape != shape:
            raise DimensionError(
                f"{path}: parameter {name!r} has shape {shape}, expected {p.tensor.shape}"
            )
        p.data = values.reshape(shape).copy()
        seen.add(name)
    missing = set(state.params) - seen
    if missing:
        raise ArgumentError(f"{path}: checkpoint missing parameters {sorted(missing)[:3]}...")
    return state
