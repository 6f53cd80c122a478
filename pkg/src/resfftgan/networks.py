"""Parsing generator, image generator and multi-scale discriminator."""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .losses import CORRESPONDENCE_TAP, FEATURE_WIDTHS
from .nn import Conv2d, Module, PerRegionNorm, SpatialAwareNorm
from .norms import N_LABELS, RegionStyle, one_hot
from .resfft import make_block
from .tensor import ShapeError, Tensor, as_tensor


def as_label_channels(P, name: str) -> Tensor:
    """Integer parsing maps become one-hot; ``[B, 8, H, W]`` passes through."""
    if isinstance(P, Tensor):
        t = P
    else:
        P = np.asarray(P)
        t = Tensor(one_hot(P) if P.ndim == 3 else P)
    if t.ndim != 4 or t.shape[1] != N_LABELS:
        raise ShapeError(f"{name} must have {N_LABELS} label channels, got {t.shape}")
    return t


def _check_joints(K, n_joints: int, name: str) -> Tensor:
    K = as_tensor(K)
    if K.ndim != 4 or K.shape[1] != n_joints:
        raise ShapeError(f"{name} must be [B, {n_joints}, H, W], got {K.shape}")
    return K


class Down(Module):
    """conv3x3 -> ReLU -> 2x2 average pool (halves the resolution)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv = Conv2d(c_in, c_out, 3, rng)

    def forward(self, x):
        return T.avgpool(T.relu(self.conv(x)), 2)


class Up(Module):
    """Nearest upsample, concatenate the skip tensor, conv3x3 -> ReLU."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv = Conv2d(c_in, c_out, 3, rng)

    def forward(self, x, skip=None):
        x = T.upsample2x(x)
        if skip is not None:
            x = T.concat([x, skip], axis=1)
        return T.relu(self.conv(x))


class ParsingGenerator(Module):
    """U-Net: 4 down stages, Res FFT-Conv bottleneck, 4 up stages with skips."""

    def __init__(self, n_joints: int = 8, width: int = 32, n_blocks: int = 2,
                 use_fft: bool = True, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_joints = n_joints
        c_in = 2 * n_joints + N_LABELS
        w = width
        self.enc = [Down(c_in, w, rng), Down(w, 2 * w, rng), Down(2 * w, 4 * w, rng),
                    Down(4 * w, 4 * w, rng)]
        self.blocks = [make_block(4 * w, rng, use_fft) for _ in range(n_blocks)]
        self.dec = [Up(8 * w, 2 * w, rng), Up(4 * w, w, rng), Up(2 * w, w, rng),
                    Up(w + c_in, w, rng)]
        self.head = Conv2d(w, N_LABELS, 3, rng, init="small")
        self.assign_names("parsing_gen")

    def forward(self, K_S, P_S, K_T) -> Tensor:
        K_S = _check_joints(K_S, self.n_joints, "K_S")
        K_T = _check_joints(K_T, self.n_joints, "K_T")
        P_S = as_label_channels(P_S, "P_S")
        if not (K_S.shape[-2:] == P_S.shape[-2:] == K_T.shape[-2:]):
            raise ShapeError("K_S, P_S and K_T must share H x W")
        x = T.concat([K_S, P_S, K_T], axis=1)
        skips = [x]
        h = x
        for stage in self.enc:
            h = stage(h)
            skips.append(h)
        skips.pop()
        for block in self.blocks:
            h = block(h)
        for stage in self.dec:
            h = stage(h, skips.pop())
        return self.head(h)


class ImageGenerator(Module):
    """Texture encoder + region styles, normalized decoder with Res FFT-Conv blocks.

    Returns the image in [-1, 1] and the feature map used by the
    correspondence loss (shaped like the FeatureNet tap it is matched to).
    """

    def __init__(self, n_joints: int = 8, width: int = 32, n_blocks: int = 2,
                 use_fft: bool = True, feature_widths=FEATURE_WIDTHS,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_joints = n_joints
        w = width
        self.enc_in = Conv2d(3 + N_LABELS + n_joints, w, 3, rng)
        self.enc = [Down(w, 2 * w, rng), Down(2 * w, 2 * w, rng)]
        self.content_in = Conv2d(N_LABELS + n_joints, w, 3, rng)
        self.content = [Down(w, 2 * w, rng), Down(2 * w, 2 * w, rng)]
        self.region_norm = PerRegionNorm(2 * w, 2 * w, rng)
        self.blocks = [make_block(2 * w, rng, use_fft) for _ in range(n_blocks)]
        self.spatial_norm = SpatialAwareNorm(2 * w, 2 * w, rng)
        self.to_features = Conv2d(2 * w, feature_widths[CORRESPONDENCE_TAP], 1, rng)
        self.dec = [Up(2 * w, w, rng), Up(w, w, rng)]
        self.to_rgb = Conv2d(w, 3, 3, rng, init="small")
        self.assign_names("image_gen")

    def forward(self, I_S, P_S, P_g, K_S, K_T) -> Tuple[Tensor, Tensor]:
        I_S = as_tensor(I_S)
        K_S = _check_joints(K_S, self.n_joints, "K_S")
        K_T = _check_joints(K_T, self.n_joints, "K_T")
        P_S = as_label_channels(P_S, "P_S")
        P_g = as_label_channels(P_g, "P_g")
        if I_S.ndim != 4 or I_S.shape[1] != 3:
            raise ShapeError(f"I_S must be [B, 3, H, W], got {I_S.shape}")

        src = T.relu(self.enc_in(T.concat([I_S, P_S, K_S], axis=1)))
        for stage in self.enc:
            src = stage(src)
        styles = RegionStyle.extract(src, T.avgpool(P_S, 4).data)

        h = T.relu(self.content_in(T.concat([P_g, K_T], axis=1)))
        for stage in self.content:
            h = stage(h)
        h = T.relu(self.region_norm(h, T.avgpool(P_g, 4), styles))
        for block in self.blocks:
            h = block(h)
        h = T.relu(self.spatial_norm(h, src))
        features = self.to_features(h)
        for stage in self.dec:
            h = stage(h)
        return T.tanh(self.to_rgb(h)), features


class _ScaleCritic(Module):
    """Patch critic for one scale; residual branch averaged to stay contractive."""

    def __init__(self, c_in: int, width: int, sn: bool, rng: np.random.Generator):
        self.conv_in = Conv2d(c_in, width, 3, rng, spectral_norm=sn)
        self.conv_down = Conv2d(width, 2 * width, 3, rng, spectral_norm=sn)
        self.res1 = Conv2d(2 * width, 2 * width, 3, rng, spectral_norm=sn)
        self.res2 = Conv2d(2 * width, 2 * width, 3, rng, spectral_norm=sn)
        self.score = Conv2d(2 * width, 1, 3, rng, spectral_norm=sn)

    def forward(self, x):
        h = T.avgpool(T.leaky_relu(self.conv_in(x)), 2)
        h = T.avgpool(T.leaky_relu(self.conv_down(h)), 2)
        h = T.leaky_relu((h + self.res2(T.leaky_relu(self.res1(h)))) * 0.5)
        return self.score(h), h.mean(axis=(2, 3))


class Discriminator(Module):
    """Two-scale conditional critic on (image, parsing map) pairs."""

    def __init__(self, width: int = 32, use_sn: bool = True, n_scales: int = 2,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.use_sn = use_sn
        self.scales = [_ScaleCritic(3 + N_LABELS, width, use_sn, rng) for _ in range(n_scales)]
        self.assign_names("discriminator")

    def forward(self, I, P) -> Tuple[List[Tensor], Tensor]:
        I = as_tensor(I)
        P = as_label_channels(P, "P")
        x = T.concat([I, P], axis=1)
        scores, embeddings = [], []
        for i, critic in enumerate(self.scales):
            if i:
                x = T.avgpool(x, 2)
            s, e = critic(x)
            scores.append(s)
            embeddings.append(e)
        return scores, T.concat(embeddings, axis=1)

    def score(self, I, P) -> Tensor:
        """Per-sample scalar: mean patch score averaged over scales."""
        scores, _ = self.forward(I, P)
        total = sum((s.mean(axis=(1, 2, 3)) for s in scores), Tensor(np.zeros(1)))
        return total * (1.0 / len(scores))
