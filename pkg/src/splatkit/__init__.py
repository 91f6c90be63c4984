"""splatkit: sparse-view 3D Gaussian splatting reconstruction."""

from .scene import GaussianCloud, build_covariance, eval_sh_color
from .cameras import Camera, make_pseudo_views, project_gaussian
from .rasterizer import RenderSettings, RasterOutput, rasterize, rasterize_backward, rasterize_reference
from .losses import LossWeights, pearson_depth_loss, photometric_loss, total_loss
from .rfinit import compute_rf_mask, rf_initialize
from .diffusion import NoiseSchedule, add_noise, sample, sample_training_sigma
from .trainer import TrainConfig, train
from .metrics import psnr
from .ssim import ssim

__version__ = "0.1.0"

__all__ = [
    "GaussianCloud", "build_covariance", "eval_sh_color",
    "Camera", "make_pseudo_views", "project_gaussian",
    "RenderSettings", "RasterOutput", "rasterize", "rasterize_backward", "rasterize_reference",
    "LossWeights", "pearson_depth_loss", "photometric_loss", "total_loss",
    "compute_rf_mask", "rf_initialize",
    "NoiseSchedule", "add_noise", "sample", "sample_training_sigma",
    "TrainConfig", "train",
    "psnr", "ssim",
]
