"""Training objectives for the parsing generator, image generator and critic.

All reductions are means so the loss weights do not depend on resolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .norms import N_LABELS, one_hot
from .tensor import ArrayLike, ShapeError, Tensor, as_tensor

FEATURE_WIDTHS = (8, 16, 32, 32)
CORRESPONDENCE_TAP = 1
LOSS_COLUMNS = ("l1", "ce", "cor", "perc", "style", "wass", "total")


class SinkhornConvergenceWarning(RuntimeWarning):
    pass


class FeatureNet:
    """Fixed random-weight feature extractor (VGG stand-in).

    Four stages of conv3x3 -> ReLU -> 2x2 average pool; the output of every
    stage is a tap.  Weights are drawn once from ``seed`` and never trained.
    """

    def __init__(self, seed: int = 1234, widths: Sequence[int] = FEATURE_WIDTHS, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.widths = tuple(widths)
        self.weights: List[Tensor] = []
        c = in_channels
        for width in self.widths:
            w = rng.standard_normal((width, c, 3, 3)) * np.sqrt(2.0 / (9 * c))
            w.setflags(write=False)
            self.weights.append(Tensor(w))
            c = width

    def __call__(self, x: ArrayLike) -> List[Tensor]:
        h = as_tensor(x)
        taps = []
        for w in self.weights:
            h = T.avgpool(T.relu(T.conv2d(h, w, pad=1)), 2)
            taps.append(h)
        return taps

    def tap_shape(self, image_size: int, tap: int = CORRESPONDENCE_TAP):
        return self.widths[tap], image_size >> (tap + 1), image_size >> (tap + 1)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def l1_loss(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "l1_loss")
    return T.tabs(a - b).mean()


def cross_entropy(logits: ArrayLike, target) -> Tensor:
    """Mean negative log-probability of the true label per pixel."""
    logits = as_tensor(logits)
    if logits.ndim != 4 or logits.shape[1] != N_LABELS:
        raise ShapeError(f"cross_entropy expects [B, {N_LABELS}, H, W] logits, got {logits.shape}")
    target = one_hot(target) if np.ndim(target) == 3 else np.asarray(target, dtype=np.float64)
    _same_shape(logits, Tensor(target), "cross_entropy")
    return -(T.log_softmax(logits, axis=1) * target).sum(axis=1).mean()


def correspondence_loss(F_n: ArrayLike, feat_target: ArrayLike) -> Tensor:
    F_n, feat_target = as_tensor(F_n), as_tensor(feat_target)
    _same_shape(F_n, feat_target, "correspondence_loss")
    return T.square(F_n - feat_target).mean()


def perceptual_loss(I_g: ArrayLike, I_t: ArrayLike, featnet: FeatureNet,
                    target_taps: Optional[List[Tensor]] = None) -> Tensor:
    I_g, I_t = as_tensor(I_g), as_tensor(I_t)
    _same_shape(I_g, I_t, "perceptual_loss")
    tt = target_taps if target_taps is not None else featnet(I_t)
    return sum((l1_loss(g, t) for g, t in zip(featnet(I_g), tt)), Tensor(0.0))


def gram(F: ArrayLike) -> Tensor:
    """Channel Gram matrix ``F F^T / (C H W)``: ``[B, C, C]``."""
    F = as_tensor(F)
    b, c, h, w = F.shape
    flat = F.reshape(b, c, h * w)
    return T.matmul(flat, T.transpose(flat, (0, 2, 1))) * (1.0 / (c * h * w))


def style_loss(I_g: ArrayLike, I_t: ArrayLike, featnet: FeatureNet,
               target_taps: Optional[List[Tensor]] = None) -> Tensor:
    I_g, I_t = as_tensor(I_g), as_tensor(I_t)
    _same_shape(I_g, I_t, "style_loss")
    tt = target_taps if target_taps is not None else featnet(I_t)
    return sum((l1_loss(gram(g), gram(t)) for g, t in zip(featnet(I_g), tt)), Tensor(0.0))


# ----------------------------------------------------------------- sinkhorn
def squared_distances(x: ArrayLike, y: ArrayLike) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"point sets must be [n, d] and [m, d], got {x.shape} and {y.shape}")
    diff = T.reshape(x, (x.shape[0], 1, -1)) - T.reshape(y, (1, y.shape[0], -1))
    return T.square(diff).sum(axis=2)


def _check_weights(w, n: int, name: str) -> np.ndarray:
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"{name} has shape {w.shape}, expected ({n},)")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be nonnegative and sum to 1 (sum={w.sum():.12g})")
    return w


def sinkhorn_distance(x: ArrayLike, y: ArrayLike, a=None, b=None, eps: float = 0.05,
                      iters: int = 100, tol: float = 1e-6, eps_scaling: bool = True,
                      return_plan: bool = False):
    """Entropic OT transport cost between weighted point sets.

    Log-domain Sinkhorn on the squared Euclidean cost.  The returned value
    is ``<plan, C>`` (no entropy term), differentiable with respect to the
    support points through the unrolled iterations.  Iteration stops early
    once the row-marginal L1 residual is below ``tol``; otherwise a
    :class:`SinkhornConvergenceWarning` reports the residual.

    With ``eps_scaling`` the potentials are first warmed up on a halving
    schedule from the first ``eps * 2^k`` at or above ``max(C)`` down to
    ``eps`` (5 sweeps per level); those sweeps do not count against ``iters``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    C = squared_distances(x, y)
    n, m = C.shape
    a = _check_weights(a, n, "a")
    b = _check_weights(b, m, "b")
    with np.errstate(divide="ignore"):
        log_a = Tensor(np.log(a)[:, None])
        log_b = Tensor(np.log(b)[None, :])
    f = Tensor(np.zeros((n, 1)))
    g = Tensor(np.zeros((1, m)))
    # levels are eps * 2^k, so the schedule is locally constant in the points
    top = float(C.data.max()) if eps_scaling else 0.0
    k = int(np.ceil(np.log2(top / eps))) if top > eps else 0
    for level in eps * 2.0 ** np.arange(k, 0, -1):
        for _ in range(5):
            f = T.logsumexp((g - C) * (1.0 / level) + log_b, axis=1, keepdims=True) * (-level)
            g = T.logsumexp((f - C) * (1.0 / level) + log_a, axis=0, keepdims=True) * (-level)
    residual = np.inf
    for _ in range(max(1, iters)):
        f = T.logsumexp((g - C) * (1.0 / eps) + log_b, axis=1, keepdims=True) * (-eps)
        g = T.logsumexp((f - C) * (1.0 / eps) + log_a, axis=0, keepdims=True) * (-eps)
        log_plan = (f + g - C).data / eps + log_a.data + log_b.data
        residual = np.abs(np.exp(log_plan).sum(axis=1) - a).sum()
        if residual < tol:
            break
    else:
        warnings.warn(f"Sinkhorn stopped after {iters} iterations with marginal residual "
                      f"{residual:.3e}", SinkhornConvergenceWarning, stacklevel=2)
    plan = T.exp((f + g - C) * (1.0 / eps) + log_a + log_b)
    cost = (plan * C).sum()
    return (cost, plan.data) if return_plan else cost


# ---------------------------------------------------------- combined losses
@dataclass
class LossWeights:
    parsing_l1: float = 5.0
    cor: float = 1.0
    l1: float = 5.0
    perc: float = 1.0
    style: float = 100.0
    adv: float = 1.0


@dataclass
class LossBreakdown:
    """Scalar loss components and the weights that combine them.

    ``l1`` is the pixel L1 of the stage's main output; ``l1_parsing`` is the
    parsing-map L1 when both generators are trained together.  Under the
    no-Wasserstein variant ``wass`` holds the hinge generator term.
    """

    l1: float = 0.0
    ce: float = 0.0
    cor: float = 0.0
    perc: float = 0.0
    style: float = 0.0
    wass: float = 0.0
    l1_parsing: float = 0.0
    total: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def recompute_total(self) -> float:
        w = self.weights
        return (w.parsing_l1 * self.l1_parsing + self.ce + w.cor * self.cor + w.l1 * self.l1
                + w.perc * self.perc + w.style * self.style + w.adv * self.wass)

    def csv_row(self, iteration: int) -> str:
        values = [getattr(self, c) for c in LOSS_COLUMNS]
        return ",".join([str(iteration)] + [repr(float(v)) for v in values])

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        if other.weights != self.weights:
            raise ValueError("cannot merge breakdowns with different weights")
        merged = {f.name: getattr(self, f.name) + getattr(other, f.name)
                  for f in fields(self) if f.name not in ("weights", "tensor")}
        t = None
        if self.tensor is not None and other.tensor is not None:
            t = self.tensor + other.tensor
        return LossBreakdown(**merged, weights=self.weights, tensor=t)


def parsing_loss(P_g: ArrayLike, P_t, weights: Union[LossWeights, float, None] = None,
                 ) -> LossBreakdown:
    """``lambda * L1(softmax(P_g), onehot(P_t)) + CE(P_g, P_t)``."""
    if weights is None:
        weights = LossWeights()
    elif not isinstance(weights, LossWeights):
        weights = LossWeights(parsing_l1=float(weights))
    P_g = as_tensor(P_g)
    target = one_hot(P_t) if np.ndim(P_t) == 3 else np.asarray(P_t, dtype=np.float64)
    l1 = l1_loss(T.softmax(P_g, axis=1), target)
    ce = cross_entropy(P_g, target)
    total = l1 * weights.parsing_l1 + ce
    return LossBreakdown(ce=ce.item(), l1_parsing=l1.item(), total=total.item(),
                         weights=weights, tensor=total)


def _mean_scores(scores) -> List[Tensor]:
    return [as_tensor(s) for s in (scores if isinstance(scores, (list, tuple)) else [scores])]


def hinge_generator_term(fake_scores) -> Tensor:
    """``-mean D(fake)`` averaged over discriminator scales."""
    scores = _mean_scores(fake_scores)
    return sum((-s.mean() for s in scores), Tensor(0.0)) * (1.0 / len(scores))


def image_loss(I_g: ArrayLike, I_t: ArrayLike, F_n: ArrayLike, feats_real: ArrayLike,
               feats_fake: ArrayLike, weights: Optional[LossWeights] = None,
               featnet: Optional[FeatureNet] = None, use_wasserstein: bool = True,
               fake_scores=None, sinkhorn_eps: float = 0.05, sinkhorn_iters: int = 100
               ) -> LossBreakdown:
    """Weighted image-generator objective.

    The adversarial term is the Sinkhorn cost between the discriminator
    embeddings of the real and fake batches (uniform weights), or the hinge
    generator term when ``use_wasserstein`` is False.
    """
    weights = weights or LossWeights()
    featnet = featnet or FeatureNet()
    I_g, I_t = as_tensor(I_g), as_tensor(I_t)
    taps_t = [t.detach() for t in featnet(I_t)]
    taps_g = featnet(I_g)
    zero = Tensor(0.0)

    l1 = l1_loss(I_g, I_t)
    cor = correspondence_loss(F_n, taps_t[CORRESPONDENCE_TAP]) if F_n is not None else zero
    perc = sum((l1_loss(g, t) for g, t in zip(taps_g, taps_t)), zero)
    style = sum((l1_loss(gram(g), gram(t)) for g, t in zip(taps_g, taps_t)), zero)
    if weights.adv == 0:
        adv = zero
    elif use_wasserstein:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SinkhornConvergenceWarning)
            adv = sinkhorn_distance(feats_fake, as_tensor(feats_real), eps=sinkhorn_eps,
                                    iters=sinkhorn_iters)
    else:
        if fake_scores is None:
            raise ValueError("hinge adversarial term needs the discriminator's fake scores")
        adv = hinge_generator_term(fake_scores)

    total = (cor * weights.cor + l1 * weights.l1 + perc * weights.perc
             + style * weights.style + adv * weights.adv)
    return LossBreakdown(l1=l1.item(), cor=cor.item(), perc=perc.item(), style=style.item(),
                         wass=adv.item(), total=total.item(), weights=weights, tensor=total)


def discriminator_loss(real_scores, fake_scores, kind: str = "hinge") -> Tensor:
    """Hinge loss ``mean relu(1 - D(real)) + mean relu(1 + D(fake))``.

    ``kind="wgan"`` gives the critic loss ``mean D(fake) - mean D(real)``.
    Multi-scale score lists are averaged over scales.
    """
    real, fake = _mean_scores(real_scores), _mean_scores(fake_scores)
    if len(real) != len(fake):
        raise ValueError("real and fake score lists differ in length")
    total = Tensor(0.0)
    for r, f in zip(real, fake):
        if kind == "hinge":
            total = total + T.relu(1.0 - r).mean() + T.relu(1.0 + f).mean()
        elif kind == "wgan":
            total = total + f.mean() - r.mean()
        else:
            raise ValueError(f"unknown discriminator loss {kind!r}")
    return total * (1.0 / len(real))

