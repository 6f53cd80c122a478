"""Layer containers: parameter discovery, convolutions and norm layers."""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import norms
from . import tensor as T
from .norms import SNState
from .tensor import Parameter, Tensor

SN_WARM_START = 100  # power-iteration steps run on the initial weights


class Module:
    """Minimal container that discovers parameters and submodules by attribute."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")

    def sn_states(self) -> Dict[str, SNState]:
        """Spectral-norm states keyed by the owning weight's parameter name."""
        return {f"{name}.weight" if name else "weight": m.sn
                for name, m in self.named_modules() if getattr(m, "sn", None) is not None}

    def assign_names(self, prefix: str) -> None:
        for name, p in self.named_parameters(prefix + "."):
            p.name = name
        for name, state in self.sn_states().items():
            state.owner = f"{prefix}.{name}"

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def warm_sn_state(w: np.ndarray, rng: np.random.Generator) -> SNState:
    """Fresh SN vectors already aligned with the initial weight."""
    m = norms.as_matrix(w)
    state = SNState.init(m.shape[0], m.shape[1], rng)
    for _ in range(SN_WARM_START):
        state = norms.power_iteration_step(m, state)
    return state


def he_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = np.sqrt(2.0)) -> np.ndarray:
    return rng.standard_normal(shape) * gain / np.sqrt(fan_in)


class Conv2d(Module):
    """Odd-kernel convolution with optional spectral normalization.

    ``init`` is ``"he"``, ``"small"`` (std 0.02) or ``"zeros"``.
    """

    def __init__(self, c_in: int, c_out: int, k: int = 3, rng: Optional[np.random.Generator] = None,
                 stride: int = 1, bias: bool = True, spectral_norm: bool = False,
                 pad_mode: str = "zeros", init: str = "he"):
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (c_out, c_in, k, k)
        if init == "he":
            w = he_normal(rng, shape, c_in * k * k)
        elif init == "small":
            w = rng.standard_normal(shape) * 0.02
        elif init == "zeros":
            w = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.pad = k // 2
        self.pad_mode = pad_mode
        self.sn = warm_sn_state(w, rng) if spectral_norm else None

    def effective_weight(self) -> Tensor:
        if self.sn is None:
            return self.weight
        if self.training:
            self.sn = norms.power_iteration_step(self.weight, self.sn)
        return norms.spectral_normalize(self.weight, self.sn)

    def forward(self, x):
        return T.conv2d(x, self.effective_weight(), self.bias, stride=self.stride,
                        pad=self.pad, pad_mode=self.pad_mode)


class Linear(Module):
    """Dense layer ``y = x W^T + b`` with optional spectral normalization."""

    def __init__(self, d_in: int, d_out: int, rng: Optional[np.random.Generator] = None,
                 bias: bool = True, spectral_norm: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(he_normal(rng, (d_out, d_in), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.sn = warm_sn_state(self.weight.data, rng) if spectral_norm else None

    def forward(self, x):
        w = self.weight
        if self.sn is not None:
            if self.training:
                self.sn = norms.power_iteration_step(w, self.sn)
            w = norms.spectral_normalize(w, self.sn)
        y = T.matmul(x, T.transpose(w, None))
        return y if self.bias is None else y + self.bias


class PerRegionNorm(Module):
    """Instance norm followed by label-wise style modulation."""

    def __init__(self, channels: int, style_dim: int, rng: np.random.Generator):
        self.gamma_w = Parameter(rng.standard_normal((channels, style_dim)) * 0.02)
        self.gamma_b = Parameter(np.zeros(channels))
        self.beta_w = Parameter(rng.standard_normal((channels, style_dim)) * 0.02)
        self.beta_b = Parameter(np.zeros(channels))

    def forward(self, F, S_target, styles: norms.RegionStyle):
        return norms.per_region_normalize(F, S_target, styles, self.gamma_w, self.gamma_b,
                                          self.beta_w, self.beta_b)


class SpatialAwareNorm(Module):
    """Instance norm modulated by conv maps of the source encoding."""

    def __init__(self, channels: int, source_channels: int, rng: np.random.Generator):
        self.gamma = Conv2d(source_channels, channels, 3, rng, init="small", pad_mode="edge")
        self.beta = Conv2d(source_channels, channels, 3, rng, init="small", pad_mode="edge")

    def forward(self, F, E_source):
        return norms.spatial_aware_normalize(F, E_source, self.gamma.weight, self.gamma.bias,
                                             self.beta.weight, self.beta.bias)
