"""Multi-scale single-image deblurring with learned-kernel down-scaling."""

from .config import (ConfigError, EvalConfig, ModelConfig, OptimizerConfig, RunConfig,
                     TrainConfig, load_config, paper_config, preset_config, ablation_row,
                     toy_config)
from .core import PadRecord, clamp_image, crop_back, pad_to_multiple
from .data import (BlurKernel, PatchSpec, SamplePair, SamplePairRef, make_coarse_gt,
                   sample_patch, scan_dataset, synth_blur, synth_blur_nonuniform)
from .downscale import DownScale1, DownScale2, bicubic_downsample
from .evaluate import MetricsReport, benchmark, decompose, eval_ssim, psnr
from .losses import (LossWeights, SsimParams, l1_loss, mix_loss, msssim_loss, ssim,
                     sub_loss)
from .model import (CoarseNet, DeblurModel, FineNet, SingleScaleModel, build_variant,
                    count_parameters)
from .train import TrainState, lr_at, train_stage1, train_stage2

__version__ = "0.1.0"
