"""Pose-transfer GAN toolkit: autodiff, real FFT, Res FFT-Conv blocks,
spectral normalization, Sinkhorn losses and a staged training harness."""

from .config import RunConfig
from .estimator import PoseTransferGAN
from .fourier import ComplexGrid, irfft2, rfft2
from .losses import FeatureNet, LossBreakdown, LossWeights, sinkhorn_distance
from .metrics import perceptual_distance, psnr
from .resfft import ResBlock, ResFFTBlock
from .synthdata import SamplePair, generate, make_split
from .tensor import Parameter, ShapeError, Tensor

__all__ = [
    "ComplexGrid", "FeatureNet", "LossBreakdown", "LossWeights", "Parameter", "PoseTransferGAN",
    "ResBlock", "ResFFTBlock", "RunConfig", "SamplePair", "ShapeError", "Tensor", "generate",
    "irfft2", "make_split", "perceptual_distance", "psnr", "rfft2", "sinkhorn_distance",
]
__version__ = "0.1.0"
