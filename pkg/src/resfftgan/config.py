"""Run configuration: flat ``key = value`` text, one entry per line, ``#`` comments."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    image_size: int = 64
    batch_size: int = 8
    data_dir: str = ""  # empty: generate pairs in memory from data_seed
    n_train: int = 200
    n_test: int = 20
    data_seed: int = 0
    # schedule
    stage1_iters: int = 2000
    stage2_iters: int = 2000
    stage3_iters: int = 500
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    beta1: float = 0.5
    beta2: float = 0.999
    # loss weights
    lambda_parsing_l1: float = 5.0
    lambda_cor: float = 1.0
    lambda_l1: float = 5.0
    lambda_perc: float = 1.0
    lambda_style: float = 100.0
    lambda_adv: float = 1.0
    sinkhorn_eps: float = 0.05
    sinkhorn_iters: int = 100
    d_loss: str = "hinge"
    # ablation flags
    use_fft_block: bool = True
    use_sn: bool = True
    use_wasserstein: bool = True
    # networks
    parsing_width: int = 32
    image_width: int = 32
    disc_width: int = 32
    n_blocks: int = 2
    n_scales: int = 2
    feature_seed: int = 1234
    # run control
    seed: int = 0
    out_dir: str = "run"
    log_every: int = 50
    sample_every: int = 0
    checkpoint_every: int = 0
    convergence_window: int = 100
    convergence_threshold: float = 0.0  # 0 disables first-hit tracking

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("stage1_iters", "stage2_iters", "stage3_iters", "n_train", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("image_size", "batch_size", "parsing_width", "image_width", "disc_width",
                     "n_scales", "convergence_window", "sinkhorn_iters"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.image_size & (self.image_size - 1) or self.image_size < 16:
            raise ConfigError("image_size must be a power of two >= 16")
        if not 0 < self.lr_end <= self.lr_start:
            raise ConfigError("need 0 < lr_end <= lr_start")
        if self.d_loss not in ("hinge", "wgan"):
            raise ConfigError(f"d_loss must be hinge or wgan, got {self.d_loss!r}")
        if self.sinkhorn_eps <= 0:
            raise ConfigError("sinkhorn_eps must be > 0")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(parsing_l1=self.lambda_parsing_l1, cor=self.lambda_cor,
                           l1=self.lambda_l1, perc=self.lambda_perc,
                           style=self.lambda_style, adv=self.lambda_adv)

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(**parse_pairs(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config not found: {path}")
        return cls.from_text(path.read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if kind in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def parse_pairs(text: str) -> Dict[str, object]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values
