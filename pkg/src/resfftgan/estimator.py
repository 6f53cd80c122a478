"""scikit-learn style wrapper around the staged trainer.

``X`` is a sequence of :class:`~resfftgan.synthdata.SamplePair` (or a dataset
directory); there is no separate ``y`` because every pair carries its target.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .harness import evaluate_models, summarize
from .synthdata import SamplePair, load_split
from .trainer import PairArrays, Trainer, predict_image, predict_parsing


def check_pairs(X: Union[str, Path, Sequence[SamplePair]], split: str = "train",
                allow_empty: bool = False) -> List[SamplePair]:
    """Validate pair inputs: same power-of-two size, matching array shapes."""
    if isinstance(X, (str, Path)):
        X = load_split(X, split)
    pairs = list(X)
    if not pairs and not allow_empty:
        raise ValueError("expected at least one SamplePair")
    sizes = set()
    for p in pairs:
        if not isinstance(p, SamplePair):
            raise TypeError(f"expected SamplePair, got {type(p).__name__}")
        h = p.P_S.shape[0]
        if p.I_S.shape != (3, h, h) or p.I_T.shape != (3, h, h):
            raise ValueError(f"pair {p.id}: images must be [3, {h}, {h}]")
        if p.K_S.shape != p.K_T.shape or p.K_S.shape[1:] != (h, h):
            raise ValueError(f"pair {p.id}: heatmaps must be [J, {h}, {h}]")
        if p.P_T.shape != (h, h):
            raise ValueError(f"pair {p.id}: parsing maps must be [{h}, {h}]")
        sizes.add(h)
    if len(sizes) > 1:
        raise ValueError(f"mixed image sizes {sorted(sizes)}")
    if sizes:
        (h,) = sizes
        if h & (h - 1) or h < 16:
            raise ValueError(f"image size must be a power of two >= 16, got {h}")
    return pairs


class PoseTransferGAN(BaseEstimator):
    """Parsing generator + image generator trained on paired poses.

    ``fit`` runs the three training stages; ``transform`` returns predicted
    target parsing maps, ``predict`` the reposed images and ``score`` the
    mean PSNR against the targets.
    """

    def __init__(self, stage1_iters: int = 2000, stage2_iters: int = 2000,
                 stage3_iters: int = 500, batch_size: int = 8, lr_start: float = 1e-4,
                 lr_end: float = 1e-6, parsing_width: int = 32, image_width: int = 32,
                 disc_width: int = 32, n_blocks: int = 2, use_fft_block: bool = True,
                 use_sn: bool = True, use_wasserstein: bool = True, seed: int = 0,
                 out_dir: Optional[str] = None):
        self.stage1_iters = stage1_iters
        self.stage2_iters = stage2_iters
        self.stage3_iters = stage3_iters
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.parsing_width = parsing_width
        self.image_width = image_width
        self.disc_width = disc_width
        self.n_blocks = n_blocks
        self.use_fft_block = use_fft_block
        self.use_sn = use_sn
        self.use_wasserstein = use_wasserstein
        self.seed = seed
        self.out_dir = out_dir

    def _config(self, image_size: int, n_train: int) -> RunConfig:
        params = self.get_params()
        out_dir = params.pop("out_dir") or ""
        return RunConfig(image_size=image_size, n_train=n_train, n_test=0, out_dir=out_dir,
                         log_every=0, **params)

    def fit(self, X, y=None):
        pairs = check_pairs(X)
        cfg = self._config(pairs[0].size, len(pairs))
        data = (PairArrays(pairs), PairArrays([]))
        if self.out_dir:
            trainer = Trainer(cfg, self.out_dir, data)
            trainer.run()
        else:
            with tempfile.TemporaryDirectory() as tmp:
                trainer = Trainer(cfg, tmp, data)
                trainer.run()
        self.config_ = cfg
        self.models_ = trainer.models
        self.n_iter_ = trainer.iteration
        self.loss_curve_ = np.array([s for _, _, s in trainer.history])
        return self

    def _arrays(self, X) -> PairArrays:
        check_is_fitted(self, "models_")
        pairs = check_pairs(X, "test", allow_empty=True)
        if pairs and pairs[0].size != self.config_.image_size:
            raise ValueError(f"fitted on {self.config_.image_size}px images, got {pairs[0].size}px")
        return PairArrays(pairs)

    def transform(self, X) -> np.ndarray:
        """Predicted target parsing maps ``[N, H, W]``."""
        data = self._arrays(X)
        if not len(data):
            return np.zeros((0, self.config_.image_size, self.config_.image_size), dtype=np.int64)
        return predict_parsing(self.models_, data.batch(np.arange(len(data))))

    def predict(self, X) -> np.ndarray:
        """Reposed images ``[N, 3, H, W]`` in [-1, 1]."""
        data = self._arrays(X)
        size = self.config_.image_size
        if not len(data):
            return np.zeros((0, 3, size, size))
        b = data.batch(np.arange(len(data)))
        return predict_image(self.models_, b, predict_parsing(self.models_, b))

    def score(self, X, y=None) -> float:
        """Mean PSNR (dB) of the reposed images against their targets."""
        data = self._arrays(X)
        summary = summarize(evaluate_models(self.models_, data, "predicted"))
        if summary is None:
            raise ValueError("cannot score an empty set")
        return summary.psnr
