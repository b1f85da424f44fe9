"""Training loop, flat key = value config files, and evaluation helpers.

Training is iteration-based (patch sampling makes epochs fuzzy): every
iteration draws a batch of aligned LR/HR patches with the run's generator,
computes pixel L1 plus the weighted sequence-consistency loss on [0, 1]
intensities, backpropagates, and applies one Adam step. Everything is a
pure function of (seed, config, dataset): two runs write byte-identical
loss records and checkpoints.

The loss record is plain text, one ``iter<TAB>l1<TAB>ssm<TAB>total`` line
per iteration, so any plotting tool can consume it directly.
"""

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import bicubic_resample, extract_patches, load_dataset_dir, make_synthetic_dataset
from .errors import ArgumentError, NumericError
from .losses import LossSsmParams, l1_pixel_loss, semantic_consistency_loss
from .metrics import evaluate_pairs
from .model import ModelConfig, init_model, model_forward, save_checkpoint
from .optim import adam_step, init_adam
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "TrainResult",
    "parse_config_file",
    "build_dataset",
    "train",
    "super_resolve",
    "evaluate_model",
    "evaluate_bicubic",
]


@dataclass
class TrainConfig:
    """Run settings; see ``config/desk.cfg`` for the documented keys."""

    lr: float = 2e-3
    batch: int = 2
    iterations: int = 300
    seed: int = 0
    lambda_loss: float = 0.1
    scale: int = 2
    patch_lr: int = 16
    patch_stride: int = 16
    checkpoint_interval: int = 100
    out_dir: str = "runs/desk"
    data_dir: str = ""
    synthetic_n: int = 4
    synthetic_size: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ArgumentError("learning rate must be positive")
        if self.batch < 1:
            raise ArgumentError("batch size must be >= 1")
        if self.scale not in (2, 4):
            raise ArgumentError(f"scale must be 2 or 4, got {self.scale}")

    @classmethod
    def from_items(cls, items):
        kwargs = {}
        field_types = {f.name: f.type for f in fields(cls)}
        for key, value in items:
            if key not in field_types:
                raise ArgumentError(f"unknown training config key {key!r}")
            t = field_types[key]
            if t in (int, "int"):
                kwargs[key] = int(value)
            elif t in (float, "float"):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value.strip()
        return cls(**kwargs)


def parse_config_file(path):
    """Read a flat ``key = value`` file into (TrainConfig, ModelConfig).

    Keys prefixed ``model.`` configure the architecture; the rest configure
    the run. ``#`` starts a comment. The model's scale and loss weight are
    forced to the training values so there is one source of truth.
    """
    train_items, model_items = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ArgumentError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if key.startswith("model."):
            model_items.append((key[len("model."):], value))
        else:
            train_items.append((key, value))
    train_cfg = TrainConfig.from_items(train_items)
    model_items = [(k, v) for k, v in model_items if k not in ("scale", "lambda_loss")]
    model_items.append(("scale", str(train_cfg.scale)))
    model_items.append(("lambda_loss", str(train_cfg.lambda_loss)))
    return train_cfg, ModelConfig.from_items(model_items)


def build_dataset(cfg):
    """Dataset named by the config: a pair directory or the synthetic set."""
    if cfg.data_dir:
        return load_dataset_dir(cfg.data_dir, cfg.scale)
    return make_synthetic_dataset(cfg.synthetic_n, cfg.synthetic_size, cfg.seed, cfg.scale)


@dataclass
class TrainResult:
    state: object
    records: list  # (iteration, l1, ssm, total)
    checkpoints: list
    loss_log: Path | None
    halted_at: int | None = None

    @property
    def final_total(self):
        return self.records[-1][3] if self.records else math.nan


def _patch_pool(dataset, cfg):
    pool = []
    for pair in dataset:
        pool.extend(extract_patches(pair, dataset.scale, cfg.patch_lr, cfg.patch_stride))
    if not pool:
        raise ArgumentError(
            f"no {cfg.patch_lr}x{cfg.patch_lr} patches available; "
            "use smaller patches or larger images"
        )
    return pool


def train(train_cfg, model_cfg, dataset, out_dir=None, log=None):
    """Run the loop; returns the trained state plus the loss record.

    ``out_dir`` (defaulting to the config's) receives ``loss_log.txt``,
    interval checkpoints and ``model_final.ckpt``. A non-finite loss halts
    the run, keeping the last interval checkpoint on disk.
    """
    if len(dataset) == 0:
        raise ArgumentError("training dataset is empty")
    if model_cfg.scale != train_cfg.scale:
        raise ArgumentError("model scale and training scale disagree")

    out = Path(out_dir if out_dir is not None else train_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(train_cfg.seed)
    state = init_model(model_cfg, seed=train_cfg.seed)
    opt = init_adam(state.params)
    loss_params = LossSsmParams.default(model_cfg.in_channels)
    pool = _patch_pool(dataset, train_cfg)

    records = []
    checkpoints = []
    halted_at = None
    for it in range(1, train_cfg.iterations + 1):
        picks = rng.integers(0, len(pool), size=train_cfg.batch)
        lr_batch = np.stack([pool[i].lr for i in picks]).astype(np.float64) / 255.0
        hr_batch = np.stack([pool[i].hr for i in picks]).astype(np.float64) / 255.0

        # Any numeric blow-up (non-finite activations, loss, or gradients)
        # halts the run with the last interval checkpoint still on disk.
        try:
            pred = model_forward(Tensor(lr_batch), state)
            target = Tensor(hr_batch)
            l1 = l1_pixel_loss(pred, target)
            sem = semantic_consistency_loss(pred, target, train_cfg.lambda_loss, loss_params)
            total = l1 + sem
            l1_v, sem_v, total_v = l1.item(), sem.item(), total.item()
            if not math.isfinite(total_v):
                raise NumericError(f"non-finite loss {total_v}")
            total.backward()
            adam_step(state.params, opt, train_cfg.lr)
        except NumericError as exc:
            halted_at = it
            if log:
                log(f"halting at iteration {it}: {exc}")
            break
        records.append((it, l1_v, sem_v, total_v))
        state.zero_grads()

        if train_cfg.checkpoint_interval and it % train_cfg.checkpoint_interval == 0:
            path = out / f"checkpoint_{it:06d}.ckpt"
            save_checkpoint(state, path)
            checkpoints.append(path)
        if log and (it % 50 == 0 or it == 1):
            log(f"iter {it:>6}  l1 {l1_v:.6f}  ssm {sem_v:.6f}  total {total_v:.6f}")

    loss_log = out / "loss_log.txt"
    with open(loss_log, "w") as fh:
        for it, l1_v, sem_v, total_v in records:
            fh.write(f"{it}\t{l1_v!r}\t{sem_v!r}\t{total_v!r}\n")

    if halted_at is None:
        final = out / "model_final.ckpt"
        save_checkpoint(state, final)
        checkpoints.append(final)
    return TrainResult(
        state=state,
        records=records,
        checkpoints=checkpoints,
        loss_log=loss_log,
        halted_at=halted_at,
    )


def super_resolve(state, lr_image):
    """Run the model on one :class:`~irsr.data.ImageBuffer`; returns float
    (C, H*scale, W*scale) values on the [0, 255] grid, unrounded."""
    x = lr_image.data.astype(np.float64)[None] / 255.0
    out = model_forward(Tensor(x), state)
    return out.data[0] * 255.0


def evaluate_model(state, dataset, border_crop=0, quantize=False):
    """Score the model over a paired dataset."""
    triples = []
    for pair in dataset:
        sr = super_resolve(state, pair.lr)
        triples.append((pair.name, np.clip(sr, 0.0, 255.0), pair.hr.data.astype(np.float64)))
    return evaluate_pairs(triples, border_crop=border_crop, quantize=quantize)


def evaluate_bicubic(dataset, border_crop=0):
    """Score plain bicubic upsampling of the LR inputs, the usual baseline."""
    triples = []
    for pair in dataset:
        up = bicubic_resample(pair.lr, pair.hr.height, pair.hr.width)
        triples.append((pair.name, up.data.astype(np.float64), pair.hr.data.astype(np.float64)))
    return evaluate_pairs(triples, border_crop=border_crop)
