"""Staged training: parsing generator, image generator + critic, joint fine-tuning.

Batches are drawn from ``default_rng([seed, stage, iteration])`` so a run
resumed from a checkpoint sees exactly the batches the uninterrupted run saw.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .checkpoint import array_to_text, load_arrays, save_arrays, text_to_array
from .config import RunConfig
from .losses import (LOSS_COLUMNS, FeatureNet, LossBreakdown, discriminator_loss, image_loss,
                     parsing_loss)
from .networks import Discriminator, ImageGenerator, ParsingGenerator
from .norms import SNState, one_hot
from .optim import Adam, cosine_lr
from .synthdata import (SamplePair, generate_split, load_split, to_uint8_image, write_pgm,
                        write_ppm)
from .tensor import Tensor

logger = logging.getLogger(__name__)

CSV_HEADER = "iter," + ",".join(LOSS_COLUMNS)
STAGES = (1, 2, 3)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------- data
class PairArrays:
    """Stacked arrays of a list of pairs, indexable by batch indices."""

    def __init__(self, pairs: Sequence[SamplePair]):
        self.ids = [p.id for p in pairs]
        self.pairs = list(pairs)
        if pairs:
            self.I_S = np.stack([p.I_S for p in pairs])
            self.I_T = np.stack([p.I_T for p in pairs])
            self.K_S = np.stack([p.K_S for p in pairs])
            self.K_T = np.stack([p.K_T for p in pairs])
            self.P_S = np.stack([p.P_S for p in pairs])
            self.P_T = np.stack([p.P_T for p in pairs])

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k)[idx] for k in ("I_S", "I_T", "K_S", "K_T", "P_S", "P_T")}

    def index(self, pair_id: str) -> int:
        try:
            return self.ids.index(pair_id)
        except ValueError:
            raise KeyError(f"unknown pair id {pair_id!r}") from None


def load_data(cfg: RunConfig) -> Tuple[PairArrays, PairArrays]:
    if cfg.data_dir:
        root = Path(cfg.data_dir)
        if not (root / "manifest.txt").exists():
            raise FileNotFoundError(f"dataset manifest missing under {root}")
        train, test = load_split(root, "train"), load_split(root, "test")
        sizes = {p.size for p in train + test}
        if sizes and sizes != {cfg.image_size}:
            raise TrainingError(f"dataset image size {sizes} differs from config {cfg.image_size}")
    else:
        train, test = generate_split(cfg.n_train, cfg.n_test, cfg.data_seed, cfg.image_size)
    return PairArrays(train), PairArrays(test)


def batch_indices(cfg: RunConfig, stage: int, iteration: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, stage, iteration])
    return rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)


# -------------------------------------------------------------------- models
@dataclass
class Models:
    parsing: ParsingGenerator
    image: ImageGenerator
    disc: Discriminator
    featnet: FeatureNet

    def modules(self):
        return {"parsing_gen": self.parsing, "image_gen": self.image, "discriminator": self.disc}


def build_models(cfg: RunConfig) -> Models:
    featnet = FeatureNet(seed=cfg.feature_seed)
    return Models(
        parsing=ParsingGenerator(8, cfg.parsing_width, cfg.n_blocks, cfg.use_fft_block,
                                 rng=np.random.default_rng([cfg.seed, 1])),
        image=ImageGenerator(8, cfg.image_width, cfg.n_blocks, cfg.use_fft_block,
                             featnet.widths, rng=np.random.default_rng([cfg.seed, 2])),
        disc=Discriminator(cfg.disc_width, cfg.use_sn, cfg.n_scales,
                           rng=np.random.default_rng([cfg.seed, 3])),
        featnet=featnet,
    )


def model_arrays(models: Models) -> Dict[str, np.ndarray]:
    out = {}
    for module in models.modules().values():
        for p in module.parameters():
            out[p.name] = p.data
        for state in module.sn_states().values():
            out[f"sn.{state.owner}.u"] = state.u
            out[f"sn.{state.owner}.v"] = state.v
            out[f"sn.{state.owner}.sigma"] = np.array(state.sigma)
    return out


def load_model_arrays(models: Models, arrays: Dict[str, np.ndarray]) -> None:
    for module in models.modules().values():
        for p in module.parameters():
            if p.name not in arrays:
                raise TrainingError(f"checkpoint lacks parameter {p.name}")
            if arrays[p.name].shape != p.shape:
                raise TrainingError(f"{p.name}: checkpoint shape {arrays[p.name].shape} != {p.shape}")
            p.data = arrays[p.name].copy()
        for name, m in module.named_modules():
            state = getattr(m, "sn", None)
            if state is not None:
                key = f"sn.{state.owner}"
                m.sn = SNState(arrays[key + ".u"].copy(), arrays[key + ".v"].copy(),
                               float(arrays[key + ".sigma"]), state.owner)


# --------------------------------------------------------------- convergence
class ConvergenceTracker:
    """Moving average of the generator objective and its first threshold hit."""

    def __init__(self, window: int = 100, threshold: float = 0.0):
        self.window = window
        self.threshold = threshold
        self.values: deque = deque(maxlen=window)
        self.first_hit: Optional[int] = None
        self.minimum = np.inf

    def update(self, iteration: int, value: float) -> float:
        self.values.append(value)
        smoothed = float(np.mean(self.values))
        if len(self.values) == self.window:
            self.minimum = min(self.minimum, smoothed)
            if self.threshold > 0 and self.first_hit is None and smoothed < self.threshold:
                self.first_hit = iteration
        return smoothed

    def reset(self) -> None:
        self.values.clear()
        self.first_hit = None
        self.minimum = np.inf

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {"tracker.values": np.array(list(self.values), dtype=np.float64),
                "tracker.first_hit": np.array(-1.0 if self.first_hit is None else self.first_hit),
                "tracker.minimum": np.array(self.minimum)}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.values = deque(arrays["tracker.values"].tolist(), maxlen=self.window)
        hit = int(arrays["tracker.first_hit"])
        self.first_hit = None if hit < 0 else hit
        self.minimum = float(arrays["tracker.minimum"])


def generator_objective(stage: int, bd: LossBreakdown) -> float:
    """Tracked objective: the total without the adversarial term."""
    if stage == 1:
        return bd.total
    return bd.total - bd.weights.adv * bd.wass


def csv_row(iteration: int, stage: int, bd: LossBreakdown) -> str:
    values = {c: getattr(bd, c) for c in LOSS_COLUMNS}
    if stage == 1:
        values["l1"] = bd.l1_parsing
    return ",".join([str(iteration)] + [repr(float(values[c])) for c in LOSS_COLUMNS])


# ------------------------------------------------------------------- trainer
class Trainer:
    """Owns models, optimizers, counters and output files of one run."""

    def __init__(self, cfg: RunConfig, out_dir=None, data: Optional[Tuple[PairArrays, PairArrays]] = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
        self.train_data, self.test_data = data if data is not None else load_data(cfg)
        if len(self.train_data) == 0 and self.total_iters > 0:
            raise TrainingError("training split is empty")
        self.models = build_models(cfg)
        self.weights = cfg.loss_weights
        adam = dict(beta1=cfg.beta1, beta2=cfg.beta2, lr=cfg.lr_start)
        self.opt_parsing = Adam(self.models.parsing.parameters(), **adam)
        self.opt_image = Adam(self.models.image.parameters(), **adam)
        self.opt_disc = Adam(self.models.disc.parameters(), **adam)
        self.iteration = 0  # global, counts completed steps
        self.tracker = ConvergenceTracker(cfg.convergence_window, cfg.convergence_threshold)
        self.history: List[Tuple[int, int, float]] = []  # (iteration, stage, smoothed)
        self._csv = None

    # -------------------------------------------------------------- schedule
    @property
    def stage_iters(self) -> Dict[int, int]:
        c = self.cfg
        return {1: c.stage1_iters, 2: c.stage2_iters, 3: c.stage3_iters}

    @property
    def total_iters(self) -> int:
        return sum(self.stage_iters.values())

    def locate(self, iteration: int) -> Tuple[int, int]:
        """Stage and within-stage step of global step ``iteration`` (0-based)."""
        start = 0
        for stage in STAGES:
            n = self.stage_iters[stage]
            if iteration < start + n:
                return stage, iteration - start
            start += n
        raise IndexError(iteration)

    # ----------------------------------------------------------------- steps
    def _set_lr(self, stage: int, step: int) -> float:
        lr = cosine_lr(step, self.stage_iters[stage], self.cfg.lr_start, self.cfg.lr_end)
        for opt in (self.opt_parsing, self.opt_image, self.opt_disc):
            opt.lr = lr
        return lr

    def step_parsing(self, b) -> LossBreakdown:
        m = self.models
        m.parsing.train()
        logits = m.parsing(b["K_S"], b["P_S"], b["K_T"])
        bd = parsing_loss(logits, b["P_T"], self.weights)
        self._check_finite(bd, 1)
        self.opt_parsing.zero_grad()
        bd.tensor.backward()
        self.opt_parsing.step()
        return bd

    def _disc_step(self, I_g: Tensor, P_fake, b) -> None:
        d = self.models.disc
        d.train()
        real, _ = d(b["I_T"], b["P_T"])
        fake, _ = d(I_g.detach(), P_fake)
        loss = discriminator_loss(real, fake, self.cfg.d_loss)
        if not np.isfinite(loss.item()):
            raise TrainingError(f"non-finite discriminator loss at iteration {self.iteration + 1}")
        self.opt_disc.zero_grad()
        loss.backward()
        self.opt_disc.step()

    def _image_objective(self, I_g, F_n, P_cond, b) -> LossBreakdown:
        d = self.models.disc
        d.eval()
        fake_scores, feats_fake = d(I_g, P_cond)
        _, feats_real = d(b["I_T"], b["P_T"])
        d.train()
        return image_loss(I_g, b["I_T"], F_n, feats_real.detach(), feats_fake, self.weights,
                          self.models.featnet, self.cfg.use_wasserstein, fake_scores,
                          self.cfg.sinkhorn_eps, self.cfg.sinkhorn_iters)

    def step_image(self, b) -> LossBreakdown:
        m = self.models
        m.image.train()
        P_T = one_hot(b["P_T"])
        I_g, F_n = m.image(b["I_S"], b["P_S"], P_T, b["K_S"], b["K_T"])
        self._disc_step(I_g, P_T, b)
        bd = self._image_objective(I_g, F_n, P_T, b)
        self._check_finite(bd, 2)
        self.opt_image.zero_grad()
        bd.tensor.backward()
        self.opt_image.step()
        return bd

    def step_joint(self, b) -> LossBreakdown:
        m = self.models
        m.parsing.train()
        m.image.train()
        logits = m.parsing(b["K_S"], b["P_S"], b["K_T"])
        soft = T.softmax(logits, axis=1)
        I_g, F_n = m.image(b["I_S"], b["P_S"], soft, b["K_S"], b["K_T"])
        self._disc_step(I_g, soft.detach(), b)
        bd = parsing_loss(logits, b["P_T"], self.weights) + self._image_objective(I_g, F_n, soft, b)
        self._check_finite(bd, 3)
        self.opt_parsing.zero_grad()
        self.opt_image.zero_grad()
        bd.tensor.backward()
        self.opt_parsing.step()
        self.opt_image.step()
        return bd

    def _check_finite(self, bd: LossBreakdown, stage: int) -> None:
        parts = {c: getattr(bd, c) for c in LOSS_COLUMNS + ("l1_parsing",)}
        bad = [k for k, v in parts.items() if not np.isfinite(v)]
        if bad:
            report = ", ".join(f"{k}={parts[k]}" for k in parts)
            raise TrainingError(f"non-finite loss at iteration {self.iteration + 1} "
                                f"(stage {stage}): {report}")

    # ------------------------------------------------------------------- run
    def run(self, stop_at: Optional[int] = None) -> Path:
        """Train until ``stop_at`` global steps (default: all); return the checkpoint path."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        end = self.total_iters if stop_at is None else min(stop_at, self.total_iters)
        self._open_csv()
        try:
            while self.iteration < end:
                self._one_step()
        finally:
            self._csv.close()
            self._csv = None
        path = self.out_dir / ("final.ckpt" if self.iteration == self.total_iters
                               else f"ckpt_{self.iteration:06d}.ckpt")
        self.save(path)
        return path

    def _one_step(self) -> None:
        stage, step = self.locate(self.iteration)
        if step == 0:
            self.tracker.reset()
        lr = self._set_lr(stage, step)
        idx = batch_indices(self.cfg, stage, step, len(self.train_data))
        b = self.train_data.batch(idx)
        bd = (self.step_parsing, self.step_image, self.step_joint)[stage - 1](b)
        self.iteration += 1
        smoothed = self.tracker.update(self.iteration, generator_objective(stage, bd))
        self.history.append((self.iteration, stage, smoothed))
        self._csv.write(csv_row(self.iteration, stage, bd) + "\n")
        cfg = self.cfg
        if cfg.log_every and self.iteration % cfg.log_every == 0:
            logger.info("iter %d stage %d lr %.3g total %.5f smoothed %.5f",
                        self.iteration, stage, lr, bd.total, smoothed)
        if cfg.sample_every and self.iteration % cfg.sample_every == 0:
            self.write_samples(stage)
        if cfg.checkpoint_every and self.iteration % cfg.checkpoint_every == 0:
            self.save(self.out_dir / f"ckpt_{self.iteration:06d}.ckpt")

    def _open_csv(self) -> None:
        path = self.out_dir / "loss.csv"
        rows = []
        if self.iteration > 0 and path.exists():
            # keep what the checkpointed run had written, drop anything later
            for line in path.read_text().splitlines()[1:]:
                if line and int(line.split(",", 1)[0]) <= self.iteration:
                    rows.append(line + "\n")
        self._csv = open(path, "w")
        self._csv.write(CSV_HEADER + "\n")
        self._csv.writelines(rows)

    def write_samples(self, stage: int) -> None:
        data = self.test_data if len(self.test_data) else self.train_data
        if not len(data):
            return
        idx = np.arange(min(4, len(data)))
        b = data.batch(idx)
        folder = self.out_dir / "samples"
        folder.mkdir(exist_ok=True)
        P_g = predict_parsing(self.models, b)
        if stage == 1:
            write_pgm(folder / f"iter_{self.iteration:06d}_parsing.pgm",
                      np.concatenate(list(P_g), axis=1).astype(np.uint8) * 32)
            return
        I_g = predict_image(self.models, b, b["P_T"] if stage == 2 else P_g)
        rows = [np.concatenate([to_uint8_image(b["I_S"][i]), to_uint8_image(I_g[i]),
                                to_uint8_image(b["I_T"][i])], axis=1) for i in range(len(idx))]
        write_ppm(folder / f"iter_{self.iteration:06d}.ppm", np.concatenate(rows, axis=0))

    # ------------------------------------------------------------ checkpoint
    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {"meta.iteration": np.array(float(self.iteration)),
                  "meta.config": text_to_array(self.cfg.to_text())}
        arrays.update(model_arrays(self.models))
        arrays.update(self.opt_parsing.state_arrays("opt.parsing_gen"))
        arrays.update(self.opt_image.state_arrays("opt.image_gen"))
        arrays.update(self.opt_disc.state_arrays("opt.discriminator"))
        arrays.update(self.tracker.state_arrays())
        return arrays

    def save(self, path) -> Path:
        save_arrays(path, self.state_arrays())
        return Path(path)

    @classmethod
    def resume(cls, path, out_dir=None, data=None, **overrides) -> "Trainer":
        arrays = load_arrays(path)
        cfg = RunConfig.from_text(array_to_text(arrays["meta.config"]))
        if overrides:
            cfg = cfg.updated(**overrides)
        trainer = cls(cfg, out_dir, data)
        load_model_arrays(trainer.models, arrays)
        trainer.opt_parsing.load_state_arrays("opt.parsing_gen", arrays)
        trainer.opt_image.load_state_arrays("opt.image_gen", arrays)
        trainer.opt_disc.load_state_arrays("opt.discriminator", arrays)
        trainer.tracker.load_state_arrays(arrays)
        trainer.iteration = int(arrays["meta.iteration"])
        return trainer


# ---------------------------------------------------------------- inference
def predict_parsing(models: Models, b) -> np.ndarray:
    was = models.parsing.training
    models.parsing.eval()
    try:
        logits = models.parsing(b["K_S"], b["P_S"], b["K_T"]).data
    finally:
        models.parsing.train(was)
    return np.argmax(logits, axis=1)


def predict_image(models: Models, b, P_g) -> np.ndarray:
    was = models.image.training
    models.image.eval()
    try:
        I_g, _ = models.image(b["I_S"], b["P_S"], one_hot(np.asarray(P_g)), b["K_S"], b["K_T"])
    finally:
        models.image.train(was)
    return I_g.data


def load_models(path) -> Tuple[RunConfig, Models]:
    arrays = load_arrays(path)
    cfg = RunConfig.from_text(array_to_text(arrays["meta.config"]))
    models = build_models(cfg)
    load_model_arrays(models, arrays)
    return cfg, models
