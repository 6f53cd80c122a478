"""Image-quality metrics: capped PSNR and a fixed-feature perceptual distance."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .losses import FeatureNet

PSNR_CAP = 100.0
_UNIT_EPS = 1e-10


def psnr(a, b, max_val: float = 1.0) -> float:
    """``10 log10(max_val^2 / MSE)``, capped at 100 dB for identical inputs."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(max_val * max_val / mse))


def image_psnr(a, b) -> float:
    """PSNR of two images stored in [-1, 1], measured on the [0, 1] scale."""
    return psnr((np.asarray(a) + 1.0) / 2.0, (np.asarray(b) + 1.0) / 2.0, 1.0)


def _unit(f: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(f * f, axis=1, keepdims=True))
    return f / (norm + _UNIT_EPS)


def perceptual_distances(a, b, featnet: Optional[FeatureNet] = None) -> np.ndarray:
    """Per-sample distance for batches ``[B, 3, H, W]``.

    Features are unit-normalized along channels at each position; the squared
    difference is summed over channels, averaged over positions, then averaged
    over the FeatureNet taps.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"perceptual_distance: shapes {a.shape} and {b.shape} differ")
    if a.ndim == 3:
        a, b = a[None], b[None]
    featnet = featnet or FeatureNet()
    taps_a, taps_b = featnet(a), featnet(b)
    per_tap = [np.sum((_unit(fa.data) - _unit(fb.data)) ** 2, axis=1).mean(axis=(1, 2))
               for fa, fb in zip(taps_a, taps_b)]
    return np.mean(per_tap, axis=0)


def perceptual_distance(a, b, featnet: Optional[FeatureNet] = None) -> float:
    """Mean of :func:`perceptual_distances` over the batch."""
    return float(np.mean(perceptual_distances(a, b, featnet)))
