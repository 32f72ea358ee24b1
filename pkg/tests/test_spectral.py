import numpy as np
import pytest
from hypothesis import given, strategies as st

from mambaout_rs.fft import dft_direct, fft1d
from mambaout_rs.spectral import (FourierFilterGate, HalfSpectrum, _irfft2_complex, column_weights,
                                  ffg, irfft2, rfft2)
from mambaout_rs.tensor import ConfigurationError, DimensionError, Parameter, Tape, Tensor


def direct_rfft2(x):
    """Double-sum 2D DFT oracle, ortho scaled, half spectrum, (B,C,H,Wf)."""
    B, H, W, C = x.shape
    wf = W // 2 + 1
    h = np.arange(H)
    w = np.arange(W)
    eh = np.exp(-2j * np.pi * np.outer(h, h) / H)
    out = np.zeros((B, C, H, wf), dtype=complex)
    for k in range(wf):
        ew = np.exp(-2j * np.pi * k * w / W)
        for u in range(H):
            out[:, :, u, k] = np.einsum("bhwc,h,w->bc", x, eh[u], ew)
    return out / np.sqrt(H * W)


# fft1d


def test_fft_length_one_identity():
    assert np.array_equal(fft1d(np.array([2.5 - 1j])), np.array([2.5 - 1j]))


@pytest.mark.parametrize("n", [2, 5, 7, 13, 56])
def test_fft_delta_is_flat(n):
    e0 = np.zeros(n)
    e0[0] = 1
    np.testing.assert_allclose(fft1d(e0), np.ones(n), atol=1e-14)


@pytest.mark.parametrize("n", [7, 14, 28, 56, 9, 13, 1, 2, 11, 97, 210])
@pytest.mark.parametrize("direction", ["forward", "inverse"])
def test_fft_matches_direct(rng, n, direction):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    np.testing.assert_allclose(fft1d(v, direction), dft_direct(v, direction), atol=1e-10)


def test_fft_rejects_empty():
    with pytest.raises(ValueError):
        fft1d(np.zeros(0))


def test_fft_vectorised_axis(rng):
    v = rng.standard_normal((3, 14, 5))
    got = fft1d(v, axis=1)
    for i in range(3):
        for j in range(5):
            np.testing.assert_allclose(got[i, :, j], dft_direct(v[i, :, j]), atol=1e-10)


@pytest.mark.parametrize("n", [7, 8, 13, 56])
def test_parseval_full_fft(rng, n):
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert np.isclose(np.linalg.norm(fft1d(x) / np.sqrt(n)), np.linalg.norm(x), rtol=1e-12)


def test_fft_single_precision_stays_single(rng):
    v = rng.standard_normal(28).astype(np.float32)
    assert fft1d(v).dtype == np.complex64


# rfft2 / irfft2


def test_rfft2_constant_field():
    H, W, c = 6, 7, 1.7
    X = rfft2(np.full((1, H, W, 2), c)).data
    want = np.zeros_like(X)
    want[:, :, 0, 0] = c * np.sqrt(H * W)
    np.testing.assert_allclose(X, want, atol=1e-12)


def test_rfft2_delta_flat():
    x = np.zeros((1, 4, 6, 1))
    x[0, 0, 0, 0] = 1
    X = rfft2(x)
    assert X.shape == (1, 1, 4, 4) and X.original_W == 6
    np.testing.assert_allclose(X.data, np.full((1, 1, 4, 4), 1 / np.sqrt(24)), atol=1e-15)


@pytest.mark.parametrize("H,W", [(3, 5), (8, 12), (7, 7), (4, 14)])
def test_rfft2_matches_direct(rng, H, W):
    x = rng.standard_normal((2, H, W, 3))
    np.testing.assert_allclose(rfft2(x).data, direct_rfft2(x), atol=1e-10)


def test_irfft2_round_trip(rng):
    x = rng.standard_normal((2, 8, 12, 3))
    assert np.abs(irfft2(rfft2(x), 8, 12) - x).max() <= 1e-10
    x = rng.standard_normal((1, 5, 7, 2))
    assert np.abs(irfft2(rfft2(x), 5, 7) - x).max() <= 1e-10


def test_irfft2_dc_only():
    H, W, v = 4, 6, 3.0
    spec = np.zeros((1, 2, H, W // 2 + 1), dtype=complex)
    spec[:, :, 0, 0] = v
    np.testing.assert_allclose(irfft2(HalfSpectrum(spec, W), H, W), np.full((1, H, W, 2), v / np.sqrt(H * W)),
                               atol=1e-15)


def test_irfft2_shape_errors():
    X = rfft2(np.zeros((1, 4, 6, 1)))
    with pytest.raises(DimensionError):
        irfft2(X, 4, 7)
    with pytest.raises(DimensionError):
        irfft2(X, 5, 6)
    with pytest.raises(DimensionError):
        HalfSpectrum(np.zeros((1, 1, 4, 3), dtype=complex), 6)


@given(st.sampled_from([4, 7, 8, 14, 28, 56]), st.sampled_from([4, 7, 8, 14, 28, 56]), st.integers(0, 2**31))
def test_round_trip_property(H, W, seed):
    x = np.random.default_rng(seed).standard_normal((1, H, W, 2))
    assert np.abs(irfft2(rfft2(x), H, W) - x).max() <= 1e-10
    x32 = x.astype(np.float32)
    assert np.abs(irfft2(rfft2(x32), H, W) - x32).max() <= 1e-4


@pytest.mark.parametrize("H,W", [(4, 8), (5, 7), (14, 14)])
def test_real_output_residue(rng, H, W):
    X = rfft2(rng.standard_normal((2, H, W, 3)))
    assert np.abs(_irfft2_complex(X, H, W).imag).max() <= 1e-12


def test_conjugate_symmetry_of_half_spectrum(rng):
    for W in (6, 7):
        X = rfft2(rng.standard_normal((1, 5, W, 1))).data[0, 0]
        cols = [0, W // 2] if W % 2 == 0 else [0]
        for k in cols:
            for h in range(5):
                assert np.isclose(X[h, k], np.conj(X[(-h) % 5, k]), atol=1e-12)


def test_column_weights():
    assert column_weights(8).tolist() == [1, 2, 2, 2, 1]
    assert column_weights(7).tolist() == [1, 2, 2, 2]


# Fourier filter gate


def _gate(C=3, H=6, W=7, seed=0, dtype=np.float64):
    return FourierFilterGate(C, (H, W), np.random.default_rng(seed), dtype)


def test_ffg_all_pass_all_stop(rng):
    g = _gate()
    x = Tensor(rng.standard_normal((2, 6, 7, 3)))
    g.mask_override = np.ones((1, 3, 6, 4))
    assert np.abs(g(x).data - x.data).max() <= 1e-10
    g.mask_override = np.zeros((1, 3, 6, 4))
    assert np.array_equal(g(x).data, np.zeros_like(x.data))


def test_ffg_dc_projector(rng):
    g = _gate(H=4, W=8)
    x = Tensor(rng.standard_normal((2, 4, 8, 3)))
    mask = np.zeros((1, 3, 4, 5))
    mask[..., 0, 0] = 1
    g.mask_override = mask
    want = np.broadcast_to(x.data.mean(axis=(1, 2), keepdims=True), x.shape)
    np.testing.assert_allclose(g(x).data, want, atol=1e-12)


def test_ffg_half_gate(rng):
    g = _gate()
    g.gate.data[:] = 0.0
    x = Tensor(rng.standard_normal((2, 6, 7, 3)))
    np.testing.assert_allclose(g(x).data, x.data / 2, atol=1e-12)


def test_ffg_resolution_mismatch():
    with pytest.raises(ConfigurationError, match="6x7"):
        _gate()(Tensor(np.zeros((1, 6, 8, 3))))


def test_ffg_gate_shape_and_init():
    g = _gate(C=96, H=28, W=28, dtype=np.float32)
    assert g.gate.shape == (1, 96, 28, 15)
    assert g.gate.dtype == np.float32
    assert abs(g.gate.data.std() - 0.02) < 0.002
    vals = g.gate_values()
    assert vals.shape == (96, 28, 15) and (vals > 0).all() and (vals < 1).all()


@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_ffg_linear_in_x(seed, a, b):
    r = np.random.default_rng(seed)
    w = Tensor(r.standard_normal((1, 2, 5, 4)))
    x1, x2 = r.standard_normal((2, 1, 5, 6, 2))
    lhs = ffg(Tensor(a * x1 + b * x2), w).data
    rhs = a * ffg(Tensor(x1), w).data + b * ffg(Tensor(x2), w).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@given(st.integers(0, 2**31), st.sampled_from([(4, 4), (5, 7), (8, 6)]))
def test_ffg_attenuates(seed, hw):
    r = np.random.default_rng(seed)
    H, W = hw
    x = r.standard_normal((2, H, W, 3))
    w = Tensor(3 * r.standard_normal((1, 3, H, W // 2 + 1)))
    assert np.linalg.norm(ffg(Tensor(x), w).data) <= np.linalg.norm(x) * (1 + 1e-12)


def test_ffg_gradients_match_finite_differences(rng):
    from mambaout_rs.gradcheck import check
    for shape in [(1, 4, 4, 2), (2, 5, 7, 3), (2, 6, 8, 1)]:
        B, H, W, C = shape
        errs = check(ffg, {"x": Parameter(rng.standard_normal(shape)),
                           "w": Parameter(rng.standard_normal((1, C, H, W // 2 + 1)))}, rng)
        assert max(errs.values()) <= 1e-6, errs


def test_ffg_mask_override_blocks_gate_gradient(rng):
    g = _gate()
    g.mask_override = np.ones((1, 3, 6, 4))
    g.gate.zero_grad()
    x = Parameter(rng.standard_normal((1, 6, 7, 3)))
    from mambaout_rs import functional as F
    with Tape() as tape:
        loss = F.sum_all(g(x))
    tape.backward(loss)
    assert np.array_equal(g.gate.grad, np.zeros_like(g.gate.data))
