"""ADSRNet single-image super-resolution on a small numpy autograd core."""

from .checkpoint import load_checkpoint, save_checkpoint
from .conv import conv2d, pixel_shuffle
from .data import DatasetIndex, ImagePair, bicubic_resize, degrade, read_png, write_png
from .dynamic import DynamicConvLayer, TemperatureSchedule
from .metrics import EvalProtocol, evaluate, psnr, ssim
from .model import ModelConfig, Network, build_variant, count_parameters, estimate_flops
from .tensor import Tensor, backward, no_grad, precision
from .train import TrainConfig, train

__all__ = [
    "DatasetIndex",
    "DynamicConvLayer",
    "EvalProtocol",
    "ImagePair",
    "ModelConfig",
    "Network",
    "Tensor",
    "TemperatureSchedule",
    "TrainConfig",
    "backward",
    "bicubic_resize",
    "build_variant",
    "conv2d",
    "count_parameters",
    "degrade",
    "estimate_flops",
    "evaluate",
    "load_checkpoint",
    "no_grad",
    "pixel_shuffle",
    "precision",
    "psnr",
    "read_png",
    "save_checkpoint",
    "ssim",
    "train",
    "write_png",
]

__version__ = "0.1.0"
