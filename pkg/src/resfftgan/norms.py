"""Spectral normalization, per-region pooling and the two generator norms."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ArrayLike, ShapeError, Tensor, as_tensor

logger = logging.getLogger(__name__)

N_LABELS = 8
_NORM_EPS = 1e-12


class SpectralNormWarning(RuntimeWarning):
    pass


@dataclass
class SNState:
    """Persistent power-iteration vectors for one weight matrix."""

    u: np.ndarray
    v: np.ndarray
    sigma: float = 0.0
    owner: str = ""

    @classmethod
    def init(cls, rows: int, cols: int, rng: np.random.Generator, owner: str = "") -> "SNState":
        u = rng.standard_normal(rows)
        v = rng.standard_normal(cols)
        return cls(u / np.linalg.norm(u), v / np.linalg.norm(v), 0.0, owner)


def as_matrix(w: ArrayLike) -> np.ndarray:
    """Conv kernels [O, C, k, k] are viewed as O x (C*k*k) matrices."""
    w = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    return w.reshape(w.shape[0], -1)


def power_iteration_step(w: ArrayLike, state: SNState) -> SNState:
    """One step v <- W^T u / |.|, u <- W v / |.|, sigma <- u^T W v.

    A zero matrix leaves the vectors unchanged and reports sigma = 0.
    """
    m = as_matrix(w)
    if state.u.shape != (m.shape[0],) or state.v.shape != (m.shape[1],):
        raise ShapeError(
            f"SN state sized ({state.u.size}, {state.v.size}) for a {m.shape} matrix")
    v = m.T @ state.u
    nv = np.linalg.norm(v)
    if nv < _NORM_EPS:
        return SNState(state.u, state.v, 0.0, state.owner)
    v = v / nv
    u = m @ v
    nu = np.linalg.norm(u)
    if nu < _NORM_EPS:
        return SNState(state.u, state.v, 0.0, state.owner)
    u = u / nu
    return SNState(u, v, float(u @ m @ v), state.owner)


def spectral_normalize(w: ArrayLike, state: SNState) -> Tensor:
    """``W / sigma`` with sigma held constant in the backward pass."""
    w = as_tensor(w)
    if state.sigma <= 0.0:
        warnings.warn(f"spectral norm of {state.owner or 'weight'} is 0; weight left unscaled",
                      SpectralNormWarning, stacklevel=2)
        return w
    return T.scale(w, 1.0 / state.sigma)


# ------------------------------------------------------------------ regions
def one_hot(labels, n: int = N_LABELS) -> np.ndarray:
    """Integer label maps ``[B, H, W]`` -> float one-hot ``[B, n, H, W]``."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"labels must lie in 0..{n - 1}")
    out = np.zeros((labels.shape[0], n) + labels.shape[1:])
    np.put_along_axis(out, labels[:, None].astype(np.int64), 1.0, axis=1)
    return out


def region_masks(S, n: int = N_LABELS) -> Tensor:
    """Accept integer maps or ``[B, n, H, W]`` (possibly soft) masks."""
    if isinstance(S, Tensor):
        return S
    S = np.asarray(S)
    if S.ndim == 3:
        return Tensor(one_hot(S, n))
    return Tensor(S)


def pooling_weights(masks: np.ndarray) -> np.ndarray:
    """Per-pixel averaging weights ``[B, L, H*W]`` realising the two-branch pooling.

    Nonempty regions average over their own pixels; empty regions fall back
    to the global spatial average.
    """
    b, n = masks.shape[:2]
    flat = masks.reshape(b, n, -1)
    area = flat.sum(axis=-1, keepdims=True)
    glob = np.full_like(flat, 1.0 / flat.shape[-1])
    return np.where(area > 0, flat / np.where(area > 0, area, 1.0), glob)


def region_pool(F: ArrayLike, S) -> Tensor:
    """Pool ``F [B, C, H, W]`` into one vector per label: ``[B, C, L]``."""
    F = as_tensor(F)
    masks = region_masks(S).data
    if masks.shape[-2:] != F.shape[-2:] or masks.shape[0] != F.shape[0]:
        raise ShapeError(f"parsing map {masks.shape} does not match features {F.shape}")
    if masks.min() < 0:
        raise ValueError("region masks must be nonnegative")
    b, c = F.shape[:2]
    weights = pooling_weights(masks)
    return T.matmul(F.reshape(b, c, -1), Tensor(weights.transpose(0, 2, 1)))


def per_region_pool(F: ArrayLike, S, j: int) -> Tensor:
    """Pooled ``[B, C]`` style vector of label ``j``."""
    if not 0 <= j < N_LABELS:
        raise ValueError(f"label {j} outside 0..{N_LABELS - 1}")
    return region_pool(F, S)[:, :, j]


@dataclass
class RegionStyle:
    """One pooled feature vector per semantic label, batched: ``[B, C, 8]``."""

    vectors: Tensor

    def __post_init__(self):
        if self.vectors.ndim != 3 or self.vectors.shape[-1] != N_LABELS:
            raise ShapeError(f"RegionStyle needs [B, C, {N_LABELS}], got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors.data)):
            raise ValueError("RegionStyle holds non-finite values")

    @classmethod
    def extract(cls, F: ArrayLike, S) -> "RegionStyle":
        return cls(region_pool(F, S))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def instance_norm(F: ArrayLike, eps: float = 1e-5) -> Tensor:
    F = as_tensor(F)
    centered = F - F.mean(axis=(2, 3), keepdims=True)
    var = T.square(centered).mean(axis=(2, 3), keepdims=True)
    return centered / T.sqrt(var + eps)


def _modulate(F: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return instance_norm(F) * (gamma + 1.0) + beta


def per_region_normalize(F: ArrayLike, S_target, styles: RegionStyle,
                         gamma_w: ArrayLike, gamma_b: ArrayLike,
                         beta_w: ArrayLike, beta_b: ArrayLike) -> Tensor:
    """Instance-normalize ``F`` then scale/shift every pixel from the style
    vector of its target label.

    ``gamma_w`` / ``beta_w`` are ``[C, C_style]`` projections.
    """
    F = as_tensor(F)
    masks = region_masks(S_target)
    b, _, h, w = F.shape
    if masks.shape[-2:] != (h, w):
        raise ShapeError(f"target map {masks.shape} does not match features {F.shape}")
    style_map = T.matmul(styles.vectors, masks.reshape(b, N_LABELS, h * w))
    gamma = T.matmul(as_tensor(gamma_w), style_map) + T.reshape(as_tensor(gamma_b), (-1, 1))
    beta = T.matmul(as_tensor(beta_w), style_map) + T.reshape(as_tensor(beta_b), (-1, 1))
    return _modulate(F, gamma.reshape(b, -1, h, w), beta.reshape(b, -1, h, w))


def spatial_aware_normalize(F: ArrayLike, E_source: ArrayLike,
                            gamma_w: ArrayLike, gamma_b: ArrayLike,
                            beta_w: ArrayLike, beta_b: ArrayLike) -> Tensor:
    """Instance-normalize ``F`` and modulate with 3x3-conv maps of ``E_source``.

    Edge padding keeps the modulation spatially uniform for constant sources.
    """
    F, E_source = as_tensor(F), as_tensor(E_source)
    if E_source.shape[-2:] != F.shape[-2:]:
        raise ShapeError(f"source features {E_source.shape} not resized to {F.shape}")
    gamma_w, beta_w = as_tensor(gamma_w), as_tensor(beta_w)
    pad = gamma_w.shape[-1] // 2
    gamma = T.conv2d(E_source, gamma_w, gamma_b, pad=pad, pad_mode="edge")
    beta = T.conv2d(E_source, beta_w, beta_b, pad=pad, pad_mode="edge")
    return _modulate(F, gamma, beta)
