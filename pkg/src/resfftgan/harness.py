"""Evaluation, generation and the ablation grid on top of :mod:`trainer`."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .metrics import image_psnr, perceptual_distances
from .synthdata import load_split, to_uint8_image, write_pgm, write_ppm
from .trainer import (PairArrays, Trainer, load_data, load_models, predict_image,
                      predict_parsing)

logger = logging.getLogger(__name__)

EVAL_HEADER = "id,psnr,perceptual_distance"
PSNR_SUMMARY_ID = "mean"

VARIANTS: Dict[str, Dict[str, bool]] = {
    "full": dict(use_fft_block=True, use_sn=True, use_wasserstein=True),
    "no-sn": dict(use_fft_block=True, use_sn=False, use_wasserstein=True),
    "no-wass": dict(use_fft_block=True, use_sn=True, use_wasserstein=False),
    "no-both": dict(use_fft_block=True, use_sn=False, use_wasserstein=False),
    "no-fft": dict(use_fft_block=False, use_sn=True, use_wasserstein=True),
}
THRESHOLD_FACTOR = 1.25


# ---------------------------------------------------------------- evaluation
@dataclass
class EvalRow:
    id: str
    psnr: float
    perceptual_distance: float

    def line(self) -> str:
        return f"{self.id},{self.psnr!r},{self.perceptual_distance!r}"


def evaluate_models(models, data: PairArrays, parsing: str = "predicted",
                    batch_size: int = 16) -> List[EvalRow]:
    """Source -> parsing -> image on every pair; ``parsing="target"`` uses P_T."""
    if parsing not in ("predicted", "target"):
        raise ValueError(f"parsing must be 'predicted' or 'target', got {parsing!r}")
    rows = []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        b = data.batch(idx)
        P_g = predict_parsing(models, b) if parsing == "predicted" else b["P_T"]
        I_g = predict_image(models, b, P_g)
        dists = perceptual_distances(I_g, b["I_T"], models.featnet)
        for k, i in enumerate(idx):
            rows.append(EvalRow(data.ids[i], image_psnr(I_g[k], b["I_T"][k]), float(dists[k])))
    return rows


def summarize(rows: Sequence[EvalRow]) -> Optional[EvalRow]:
    if not rows:
        return None
    return EvalRow(PSNR_SUMMARY_ID, float(np.mean([r.psnr for r in rows])),
                   float(np.mean([r.perceptual_distance for r in rows])))


def write_eval_csv(path, rows: Sequence[EvalRow]) -> None:
    lines = [EVAL_HEADER] + [r.line() for r in rows]
    summary = summarize(rows)
    if summary is not None:
        lines.append(summary.line())
    Path(path).write_text("\n".join(lines) + "\n")


def default_parsing_mode(cfg: RunConfig) -> str:
    """An untrained parsing generator is useless, so fall back to P_T."""
    return "predicted" if cfg.stage1_iters + cfg.stage3_iters > 0 else "target"


def evaluate(checkpoint, data_dir=None, out=None, parsing: Optional[str] = None) -> List[EvalRow]:
    """Metrics CSV for the test split of ``data_dir`` (or the run's own data)."""
    cfg, models = load_models(checkpoint)
    if data_dir:
        test = PairArrays(load_split(data_dir, "test")) if _has_manifest(data_dir) else None
        if test is None:
            raise FileNotFoundError(f"dataset manifest missing under {data_dir}")
    else:
        _, test = load_data(cfg)
    rows = evaluate_models(models, test, parsing or default_parsing_mode(cfg))
    if out is not None:
        write_eval_csv(out, rows)
    return rows


def _has_manifest(root) -> bool:
    return (Path(root) / "manifest.txt").exists()


# ---------------------------------------------------------------- generation
def _all_pairs(cfg: RunConfig, data_dir) -> PairArrays:
    if data_dir:
        if not _has_manifest(data_dir):
            raise FileNotFoundError(f"dataset manifest missing under {data_dir}")
        return PairArrays(load_split(data_dir, "train") + load_split(data_dir, "test"))
    train, test = load_data(cfg)
    return PairArrays(train.pairs + test.pairs)


def generate(checkpoint, source: str, pose: str, out, data_dir=None) -> Dict[str, np.ndarray]:
    """Repose the source image of pair ``source`` into the source pose of pair ``pose``.

    Writes ``out`` (PPM) and the intermediate parsing map next to it
    (``<stem>_parsing.pgm``).  ``source == pose`` is the identity task.
    """
    cfg, models = load_models(checkpoint)
    pairs = _all_pairs(cfg, data_dir)
    s, p = pairs.index(source), pairs.index(pose)
    b = pairs.batch(np.array([s]))
    b["K_T"] = pairs.K_S[[p]]
    b["P_T"] = pairs.P_S[[p]]
    P_g = predict_parsing(models, b)
    I_g = predict_image(models, b, P_g)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, to_uint8_image(I_g[0]))
    write_pgm(out.with_name(out.stem + "_parsing.pgm"), P_g[0].astype(np.uint8))
    return {"image": I_g[0], "parsing": P_g[0], "target": b["I_S"][0] if s == p else None}


# ------------------------------------------------------------------ ablation
@dataclass
class AblationRow:
    variant: str
    seed: int
    converge_iter: Optional[int]
    perceptual_distance: float
    psnr: float
    curve: np.ndarray  # smoothed tracked objective per iteration

    def line(self) -> str:
        it = "" if self.converge_iter is None else str(self.converge_iter)
        return f"{self.variant},{self.seed},{it},{self.perceptual_distance!r},{self.psnr!r}"


ABLATION_HEADER = "variant,seed,converge_iter,perceptual_distance,psnr"


def parse_variants(text: str) -> List[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    unknown = [v for v in names if v not in VARIANTS]
    if unknown or not names:
        raise ValueError(f"unknown variants {unknown}; choose from {', '.join(VARIANTS)}")
    return names


def first_hit(curve: np.ndarray, threshold: float, window: int) -> Optional[int]:
    """First 1-based iteration whose full-window moving average is below ``threshold``."""
    hits = np.nonzero(curve[window - 1:] < threshold)[0]
    return None if hits.size == 0 else int(hits[0]) + window


def run_variant(cfg: RunConfig, variant: str, seed: int, out_dir,
                data=None) -> AblationRow:
    vcfg = cfg.updated(seed=seed, **VARIANTS[variant])
    trainer = Trainer(vcfg, Path(out_dir) / f"{variant}_seed{seed}", data)
    trainer.run()
    curve = np.array([s for _, _, s in trainer.history])
    rows = evaluate_models(trainer.models, trainer.test_data, default_parsing_mode(vcfg))
    summary = summarize(rows)
    pd = summary.perceptual_distance if summary else float("nan")
    ps = summary.psnr if summary else float("nan")
    logger.info("variant %s seed %d: perceptual %.5f psnr %.3f", variant, seed, pd, ps)
    return AblationRow(variant, seed, None, pd, ps, curve)


def ablate(cfg: RunConfig, variants: Sequence[str], seeds: Sequence[int] = (0,),
           out_dir=None, threshold: Optional[float] = None) -> Dict[str, object]:
    """Train every variant under every seed on the same data.

    The convergence threshold is ``cfg.convergence_threshold`` when set,
    else ``threshold``, else 1.25x the minimum smoothed objective of a pilot
    ``full`` run (the first seed's, reused as that seed's ``full`` row).
    """
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_data(cfg)
    window = cfg.convergence_window
    rows: List[AblationRow] = []
    pilot = None
    if cfg.convergence_threshold > 0:
        threshold = cfg.convergence_threshold
    if threshold is None:
        pilot = run_variant(cfg, "full", seeds[0], out_dir, data)
        valid = pilot.curve[window - 1:]
        if valid.size == 0:
            raise ValueError("pilot run shorter than the convergence window")
        threshold = THRESHOLD_FACTOR * float(np.min(valid))
    for seed in seeds:
        for variant in variants:
            if pilot is not None and variant == "full" and seed == seeds[0]:
                row = pilot
            else:
                row = run_variant(cfg, variant, seed, out_dir, data)
            row.converge_iter = first_hit(row.curve, threshold, window)
            rows.append(row)
    table = [ABLATION_HEADER] + [r.line() for r in rows]
    (out_dir / "ablation.csv").write_text("\n".join(table) + "\n")
    return {"threshold": threshold, "rows": rows, "medians": ablation_medians(rows, cfg)}


def ablation_medians(rows: Sequence[AblationRow], cfg: RunConfig) -> Dict[str, Dict[str, float]]:
    """Median over seeds; runs that never converge count as ``total + 1``."""
    never = cfg.stage1_iters + cfg.stage2_iters + cfg.stage3_iters + 1
    out = {}
    for variant in dict.fromkeys(r.variant for r in rows):
        sel = [r for r in rows if r.variant == variant]
        out[variant] = {
            "converge_iter": float(np.median([never if r.converge_iter is None else r.converge_iter
                                              for r in sel])),
            "perceptual_distance": float(np.median([r.perceptual_distance for r in sel])),
            "psnr": float(np.median([r.psnr for r in sel])),
        }
    return out

