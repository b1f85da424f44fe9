"""Infrared image super-resolution with a state-space scan backbone.

The package is a small, fully testable stack: a float64 autodiff tensor
core (:mod:`irsr.tensor`), diagonal state-space scans (:mod:`irsr.ssm`),
Haar wavelet feature modulation (:mod:`irsr.wavelet`), the model itself
(:mod:`irsr.model`), training objectives (:mod:`irsr.losses`), reference
metrics (:mod:`irsr.metrics`), NetPBM data plumbing (:mod:`irsr.data`),
and an Adam trainer with a CLI (:mod:`irsr.training`, :mod:`irsr.cli`).
"""

from .data import (
    ImageBuffer,
    PairedDataset,
    bicubic_resample,
    extract_patches,
    load_dataset_dir,
    load_image,
    make_synthetic_dataset,
    save_image,
)
from .errors import ArgumentError, DimensionError, ImageParseError, NumericError
from .losses import LossSsmParams, l1_pixel_loss, semantic_consistency_loss, total_loss
from .metrics import EvalReport, evaluate_pairs, mse, psnr, residual_distribution, rgb_to_y, ssim
from .model import (
    ModelConfig,
    ModelState,
    init_model,
    load_checkpoint,
    model_forward,
    param_count,
    rssb_forward,
    save_checkpoint,
    vssm_forward,
)
from .optim import AdamState, adam_step, init_adam
from .ssm import (
    DIRECTIONS,
    ScanDirection,
    SelectiveScanParams,
    SsmParams,
    discretize_zoh,
    fold_direction,
    scan_2d,
    selective_scan,
    ssm_kernel,
    ssm_scan_lti,
    unfold_direction,
)
from .tensor import Parameter, Tensor, check_gradients
from .training import (
    TrainConfig,
    build_dataset,
    evaluate_bicubic,
    evaluate_model,
    parse_config_file,
    super_resolve,
    train,
)
from .wavelet import WaveletBands, dwt2_haar, idwt2_haar, wtfm_forward

__version__ = "0.1.0"
