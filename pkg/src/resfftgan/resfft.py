"""Residual block with a parallel Fourier-domain stream.

    out = x + conv3(relu(conv3(x))) + irfft2(conv1(relu(conv1(rfft2(x)))))

The half spectrum is carried as ``2C`` real channels (real parts, then
imaginary parts) so both 1x1 convolutions are ordinary real convolutions.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .fourier import irfft2_channels, is_power_of_two, rfft2, rfft2_channels
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor, as_tensor


class ResBlock(Module):
    """Plain residual block: ``x + conv3(relu(conv3(x)))``."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None,
                 spectral_norm: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.spatial_conv1 = Conv2d(channels, channels, 3, rng, spectral_norm=spectral_norm)
        # the output conv starts at zero so a fresh block is the identity
        self.spatial_conv2 = Conv2d(channels, channels, 3, rng, spectral_norm=spectral_norm,
                                    init="zeros" if not spectral_norm else "he")

    def _check(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"block expects [B, {self.channels}, H, W], got {x.shape}")

    def spatial_stream(self, x):
        return self.spatial_conv2(T.relu(self.spatial_conv1(x)))

    def forward(self, x):
        x = as_tensor(x)
        self._check(x)
        return x + self.spatial_stream(x)


class ResFFTBlock(ResBlock):
    """Res FFT-Conv block.

    Like the spatial stream, the output 1x1 conv of the frequency stream
    starts at zero, so a fresh block is the identity; the first 1x1 conv keeps
    a random init (zeroing both would leave the stream without gradient).
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None,
                 spectral_norm: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(channels, rng, spectral_norm)
        self.freq_conv1 = Conv2d(2 * channels, 2 * channels, 1, rng)
        self.freq_conv2 = Conv2d(2 * channels, 2 * channels, 1, rng, init="zeros")

    def freq_stream(self, x):
        z = rfft2_channels(x)
        z = self.freq_conv2(T.relu(self.freq_conv1(z)))
        return irfft2_channels(z, x.shape[-1])

    def forward(self, x):
        x = as_tensor(x)
        self._check(x)
        h, w = x.shape[-2:]
        if not (is_power_of_two(h) and is_power_of_two(w)):
            raise ShapeError(f"Res FFT-Conv block needs power-of-two extents, got {h}x{w}")
        return x + self.spatial_stream(x) + self.freq_stream(x)


def make_block(channels: int, rng: np.random.Generator, use_fft: bool = True,
               spectral_norm: bool = False) -> ResBlock:
    cls = ResFFTBlock if use_fft else ResBlock
    return cls(channels, rng, spectral_norm)


def unit_sinusoid(channels: int, size: int, frequency_index) -> np.ndarray:
    """``cos(2 pi (u h / H + v w / W))`` on every channel, shape [1, C, H, W]."""
    u, v = frequency_index
    hh, ww = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    wave = np.cos(2 * np.pi * (u * hh + v * ww) / size)
    return np.broadcast_to(wave, (1, channels, size, size)).copy()


def frequency_response_probe(block: ResBlock, frequency_index, size: int = 8) -> float:
    """Output/input spectral magnitude of ``block`` at one spatial frequency.

    Feeds a unit sinusoid at ``(u, v)`` and compares the root energy of that
    bin across channels, before and after the block.
    """
    u, v = frequency_index
    if not 0 <= v <= size // 2:
        raise ValueError(f"column frequency {v} outside the half spectrum 0..{size // 2}")
    x = unit_sinusoid(block.channels, size, (u, v))
    was_training = block.training
    block.eval()
    try:
        y = block(Tensor(x)).data
    finally:
        block.train(was_training)
    bx, by = rfft2(x), rfft2(y)
    row = u % size

    def energy(grid):
        return np.sqrt(np.sum(grid.re[..., row, v] ** 2 + grid.im[..., row, v] ** 2))

    return float(energy(by) / energy(bx))
