import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resfftgan.fourier import (ComplexGrid, dft1d_reference, fft, ifft, irfft2, irfft2_backward,
                               irfft2_channels, rfft2, rfft2_backward, rfft2_channels)
from resfftgan.tensor import ShapeError, Tensor

from oracles import check_gradients, dft2_reference, numeric_grad, rel_error

rng = np.random.default_rng(11)


def test_dft_reference_examples():
    np.testing.assert_allclose(dft1d_reference([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)
    np.testing.assert_allclose(dft1d_reference([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-14)


def test_dft_reference_conjugate_symmetry_real_input():
    X = dft1d_reference(rng.standard_normal(8))
    for k in range(1, 8):
        assert abs(X[8 - k] - np.conj(X[k])) < 1e-12


def test_dft_reference_needs_samples():
    with pytest.raises(ValueError):
        dft1d_reference([])


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32])
def test_fft_matches_reference(n):
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    np.testing.assert_allclose(fft(x), dft1d_reference(x), atol=1e-10)
    np.testing.assert_allclose(ifft(fft(x)), x, atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ShapeError):
        fft(np.ones(6))


def test_rfft2_constant_and_impulse():
    c = 1.75
    g = rfft2(np.full((4, 8), c))
    full = g.to_complex()
    assert full[0, 0] == pytest.approx(c * 32)
    full[0, 0] = 0
    assert np.abs(full).max() < 1e-12
    imp = np.zeros((4, 8))
    imp[0, 0] = 1
    np.testing.assert_allclose(rfft2(imp).to_complex(), np.ones((4, 5)), atol=1e-15)


@pytest.mark.parametrize("h,w", [(2, 2), (4, 4), (8, 8), (16, 16), (4, 16), (8, 2)])
def test_rfft2_matches_separable_reference(h, w):
    x = rng.standard_normal((2, h, w))
    g = rfft2(x)
    assert g.half_width == w // 2 + 1 and g.width == w and g.height == h
    ref = dft2_reference(x)[..., : w // 2 + 1]
    np.testing.assert_allclose(g.to_complex(), ref, atol=1e-9)
    np.testing.assert_allclose(irfft2(g), x, atol=1e-12)


def test_dc_bin_is_real():
    g = rfft2(rng.standard_normal((3, 8, 8)))
    assert np.abs(g.im[..., 0, 0]).max() < 1e-12


def test_full_spectrum_is_conjugate_symmetric():
    x = rng.standard_normal((8, 8))
    X = rfft2(x).full_spectrum()
    for u in range(8):
        for v in range(8):
            assert abs(X[(-u) % 8, (-v) % 8] - np.conj(X[u, v])) < 1e-10
    np.testing.assert_allclose(X, dft2_reference(x), atol=1e-9)


def test_irfft2_zero_and_cosine():
    assert not irfft2(ComplexGrid(np.zeros((4, 3)), np.zeros((4, 3)), 4)).any()
    # A cos(2 pi (u h / H + v w / W)) has spectrum A H W / 2 at (u, v), with v inside the half
    H = W = 8
    u, v, A = 1, 2, 0.7
    re = np.zeros((H, W // 2 + 1))
    re[u, v] = A * H * W / 2
    re[(-u) % H, v] = 0.0  # the mirror lives in the dropped half for 0 < v < W/2
    got = irfft2(ComplexGrid(re, np.zeros_like(re), W))
    hh, ww = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    np.testing.assert_allclose(got, A * np.cos(2 * np.pi * (u * hh / H + v * ww / W)), atol=1e-12)


def test_malformed_grid_rejected():
    with pytest.raises(ShapeError):
        ComplexGrid(np.zeros((4, 4)), np.zeros((4, 4)), 8)
    with pytest.raises(ShapeError):
        ComplexGrid(np.zeros((4, 3)), np.zeros((4, 2)), 4)
    with pytest.raises(ShapeError):
        rfft2(np.zeros((6, 8)))


def test_linearity():
    x, y = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    a, b = 1.3, -0.4
    lhs = rfft2(a * x + b * y).to_complex()
    rhs = a * rfft2(x).to_complex() + b * rfft2(y).to_complex()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 8, 16]), st.sampled_from([2, 4, 8, 16]), st.integers(0, 2**31))
def test_parseval_and_roundtrip(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((h, w))
    g = rfft2(x)
    energy = np.sum(np.abs(g.full_spectrum()) ** 2) / (h * w)
    assert energy == pytest.approx(np.sum(x * x), rel=1e-6)
    np.testing.assert_allclose(irfft2(g), x, atol=1e-9)


def _adjoint_pair(h, w):
    """<rfft2(x), G> == <x, rfft2_backward(G)> on the real-parameterized spectrum."""
    x = rng.standard_normal((h, w))
    G = ComplexGrid(rng.standard_normal((h, w // 2 + 1)), rng.standard_normal((h, w // 2 + 1)), w)
    fx = rfft2(x)
    lhs = np.sum(fx.re * G.re + fx.im * G.im)
    return lhs, np.sum(x * rfft2_backward(G))


@pytest.mark.parametrize("h,w", [(4, 4), (8, 4), (2, 8)])
def test_rfft2_backward_is_adjoint(h, w):
    lhs, rhs = _adjoint_pair(h, w)
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rfft2_backward_finite_differences(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((4, 8))
    G = ComplexGrid(r.standard_normal((4, 5)), r.standard_normal((4, 5)), 8)

    def f():
        fx = rfft2(x)
        return float(np.sum(fx.re * G.re + fx.im * G.im))

    assert rel_error(rfft2_backward(G), numeric_grad(f, x)) < 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_irfft2_backward_finite_differences(seed):
    r = np.random.default_rng(seed)
    re, im = r.standard_normal((4, 5)), r.standard_normal((4, 5))
    g = r.standard_normal((4, 8))

    def f():
        return float(np.sum(irfft2(ComplexGrid(re, im, 8)) * g))

    back = irfft2_backward(g)
    assert rel_error(back.re, numeric_grad(f, re)) < 1e-4
    assert rel_error(back.im, numeric_grad(f, im)) < 1e-4


def test_channel_ops_gradients():
    x = Tensor(rng.standard_normal((2, 2, 4, 4)), requires_grad=True)
    w1 = rng.standard_normal((2, 4, 4, 3))

    def loss():
        z = rfft2_channels(x)
        return (irfft2_channels(z * w1, 4) * x).sum()

    assert check_gradients(loss, [x]) < 1e-4


def test_channel_layout_real_then_imag():
    x = rng.standard_normal((1, 3, 4, 4))
    z = rfft2_channels(x).data
    g = rfft2(x)
    np.testing.assert_allclose(z[:, :3], g.re)
    np.testing.assert_allclose(z[:, 3:], g.im)
    np.testing.assert_allclose(irfft2_channels(z, 4).data, x, atol=1e-12)
