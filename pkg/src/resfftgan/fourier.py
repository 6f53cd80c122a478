"""Radix-2 FFTs, the real 2D transform pair and their autodiff wrappers.

Convention: the forward transform is unnormalized, the inverse carries the
``1 / (H * W)`` factor.  Real spectra are stored as half grids of width
``W // 2 + 1`` along the last axis, which is the smallest layout that keeps
both the DC and the Nyquist column and therefore inverts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import ArrayLike, ShapeError, Tensor, as_tensor


def dft1d_reference(x) -> np.ndarray:
    """O(N^2) discrete Fourier transform straight from the definition."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("dft1d_reference needs at least one sample")
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ basis.T


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)


def fft(x, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along ``axis``.

    ``inverse=True`` flips the twiddle sign and applies the ``1/N`` factor.
    """
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ShapeError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = x.shape[:-1]
    a = x[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * _twiddles(size, inverse)
        a = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    a = a.reshape(*lead, n)
    if inverse:
        a = a / n
    return np.moveaxis(a, -1, axis)


def ifft(x, axis: int = -1) -> np.ndarray:
    return fft(x, axis=axis, inverse=True)


@dataclass
class ComplexGrid:
    """Half spectrum of a batch of real images.

    ``re`` and ``im`` have shape ``[..., H, W // 2 + 1]``; ``width`` keeps
    the original ``W`` so that the inverse is unambiguous.
    """

    re: np.ndarray
    im: np.ndarray
    width: int

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")
        if self.re.ndim < 2:
            raise ShapeError("ComplexGrid needs at least [H, W_h] axes")
        if self.re.shape[-1] != self.width // 2 + 1:
            raise ShapeError(
                f"half width {self.re.shape[-1]} does not match width {self.width} "
                f"(expected {self.width // 2 + 1})")

    @property
    def height(self) -> int:
        return self.re.shape[-2]

    @property
    def half_width(self) -> int:
        return self.re.shape[-1]

    @property
    def shape(self):
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @classmethod
    def from_complex(cls, z: np.ndarray, width: int) -> "ComplexGrid":
        return cls(z.real.copy(), z.imag.copy(), width)

    def full_spectrum(self) -> np.ndarray:
        """Hermitian extension to the full ``[H, W]`` spectrum."""
        z = self.to_complex()
        h, w = self.height, self.width
        full = np.zeros(z.shape[:-1] + (w,), dtype=np.complex128)
        full[..., : self.half_width] = z
        rows = (-np.arange(h)) % h
        for col in range(self.half_width, w):
            full[..., col] = np.conj(z[..., rows, w - col])
        return full


def _check_spatial(h: int, w: int) -> None:
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ShapeError(f"rfft2 needs power-of-two extents, got {h}x{w}")


def rfft2(x) -> ComplexGrid:
    """Real 2D FFT over the last two axes, keeping ``W // 2 + 1`` columns."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    _check_spatial(h, w)
    z = fft(x, axis=-1)[..., : w // 2 + 1]
    z = fft(z, axis=-2)
    return ComplexGrid.from_complex(z, w)


def irfft2(grid: ComplexGrid) -> np.ndarray:
    """Inverse of :func:`rfft2`; imaginary parts of the self-conjugate
    columns (DC, Nyquist) are ignored so the output is always real."""
    if not isinstance(grid, ComplexGrid):
        raise TypeError("irfft2 expects a ComplexGrid")
    h, w = grid.height, grid.width
    _check_spatial(h, w)
    z = ifft(grid.to_complex(), axis=-2)
    full = np.zeros(z.shape[:-1] + (w,), dtype=np.complex128)
    full[..., : grid.half_width] = z
    for col in range(grid.half_width, w):
        full[..., col] = np.conj(z[..., w - col])
    return ifft(full, axis=-1).real


def _column_weights(w: int) -> np.ndarray:
    """How often each half-spectrum column appears in the full spectrum."""
    weights = np.full(w // 2 + 1, 2.0)
    weights[0] = 1.0
    if w % 2 == 0:
        weights[-1] = 1.0
    return weights


def rfft2_backward(grad: ComplexGrid) -> np.ndarray:
    """Adjoint of :func:`rfft2` as a real-linear map.

    ``grad.re`` / ``grad.im`` hold dL/dRe X and dL/dIm X; the result is
    dL/dx.  Only half-spectrum bins are counted: each entry of the half grid
    is an independent output of the forward map.
    """
    h, w = grad.height, grad.width
    g = grad.to_complex()
    g = fft(g, axis=-2, inverse=True) * h
    padded = np.zeros(g.shape[:-1] + (w,), dtype=np.complex128)
    padded[..., : grad.half_width] = g
    return (fft(padded, axis=-1, inverse=True) * w).real


def irfft2_backward(grad: np.ndarray) -> ComplexGrid:
    """Adjoint of :func:`irfft2`: maps dL/dx to dL/d(re, im) of the half grid."""
    grad = np.asarray(grad, dtype=np.float64)
    h, w = grad.shape[-2:]
    z = fft(grad, axis=-1)[..., : w // 2 + 1] * (_column_weights(w) / w)
    z = fft(z, axis=-2) / h
    return ComplexGrid.from_complex(z, w)


# ------------------------------------------------------------ autodiff ops
def rfft2_channels(x: ArrayLike) -> Tensor:
    """``[B, C, H, W]`` -> ``[B, 2C, H, W//2+1]`` with real parts first."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"rfft2_channels expects [B, C, H, W], got {x.shape}")
    c = x.shape[1]
    grid = rfft2(x.data)

    def backward(g):
        return (rfft2_backward(ComplexGrid(g[:, :c], g[:, c:], grid.width)),)

    out = np.concatenate([grid.re, grid.im], axis=1)
    return Tensor._make(out, (x,), backward, "rfft2")


def irfft2_channels(z: ArrayLike, width: int) -> Tensor:
    """Inverse of :func:`rfft2_channels`; ``width`` is the spatial ``W``."""
    z = as_tensor(z)
    if z.ndim != 4 or z.shape[1] % 2:
        raise ShapeError(f"irfft2_channels expects [B, 2C, H, W_h], got {z.shape}")
    c = z.shape[1] // 2
    grid = ComplexGrid(z.data[:, :c], z.data[:, c:], width)

    def backward(g):
        gg = irfft2_backward(g)
        return (np.concatenate([gg.re, gg.im], axis=1),)

    return Tensor._make(irfft2(grid), (z,), backward, "irfft2")
