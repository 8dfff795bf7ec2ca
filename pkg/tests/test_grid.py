import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quinticbose.grid import VOLUME, GridMismatchError, SobolevWeight, TorusGrid, random_field


def test_rejects_bad_sizes():
    for n in (6, 9, 0):
        with pytest.raises(ValueError):
            TorusGrid(n)


def test_geometry(grid8):
    assert np.isclose(grid8.cell_volume, (2 * np.pi / 8) ** 3)
    assert np.isclose(grid8.volume, VOLUME)
    ks = set(map(tuple, np.stack([k.ravel() for k in grid8.wavevectors], 1).tolist()))
    # closed under negation modulo the Nyquist row, which aliases to itself
    for k in ks:
        m = tuple(((-c + 4) % 8) - 4 for c in k)
        assert m in ks


def test_forward_constant_and_single_mode(grid8):
    c = grid8.forward(np.ones(grid8.shape))
    assert np.isclose(c[0, 0, 0], 1.0)
    assert np.abs(c).sum() - 1 < 1e-12
    c = grid8.forward(grid8.plane_wave((1, 0, 0), normalized=False))
    assert np.isclose(c[1, 0, 0], 1.0)
    c[1, 0, 0] = 0
    assert np.abs(c).max() < 1e-12


def test_roundtrip_and_shape_check(grid8, rng):
    f = random_field(grid8, rng)
    assert np.allclose(grid8.inverse(grid8.forward(f)), f, rtol=0, atol=1e-12)
    assert grid8.check(f.ravel()).shape == grid8.shape
    with pytest.raises(GridMismatchError):
        grid8.check(np.zeros(10))


def test_multiplier_examples(grid8):
    e = grid8.plane_wave((1, 2, 0))
    out = grid8.apply_multiplier(e, -0.5)
    assert np.allclose(out, e / np.sqrt(6.0), atol=1e-14)
    one = np.ones(grid8.shape)
    assert np.allclose(grid8.apply_multiplier(one, 2.0), one)
    assert np.allclose(grid8.apply_multiplier(e, SobolevWeight(0.0)), e)


def test_sobolev_norm_examples(grid8):
    assert np.isclose(grid8.sobolev_norm(grid8.constant(), 3.0), 1.0)
    assert np.isclose(grid8.sobolev_norm(grid8.plane_wave((1, 0, 0)), 1.0), np.sqrt(2.0))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(-2, 2))
def test_parseval_and_multiplier_inverse(seed, s):
    g = TorusGrid(8)
    f = random_field(g, np.random.default_rng(seed), normalize=False)
    direct = np.sqrt(np.sum(np.abs(f) ** 2) * g.cell_volume)
    assert abs(g.sobolev_norm(f, 0.0) - direct) <= 1e-12 * direct
    back = g.apply_multiplier(g.apply_multiplier(f, s), -s)
    assert np.linalg.norm(back - f) <= 1e-12 * np.linalg.norm(f) * max(1.0, 5.0 ** abs(s))


def test_convolution_constants(grid8):
    one = np.ones(grid8.shape)
    assert np.allclose(grid8.convolve(one, one), VOLUME)


def test_convolution_matches_direct_sum(grid8, rng):
    f = random_field(grid8, rng)
    g = random_field(grid8, rng)
    n = grid8.n
    idx = np.indices(grid8.shape).reshape(3, -1)
    d = (idx[:, :, None] - idx[:, None, :]) % n
    F = f[d[0], d[1], d[2]]                     # f(x - y)
    direct = (F @ g.ravel()) * grid8.cell_volume
    fast = grid8.convolve(f, g).ravel()
    assert np.linalg.norm(fast - direct) <= 1e-10 * np.linalg.norm(direct)


def test_convolution_with_plane_wave(grid8, rng):
    g = random_field(grid8, rng)
    k = (1, -2, 3)
    e = grid8.plane_wave(k, normalized=False)
    out = grid8.convolve(e, g)
    ghat = grid8.fourier_transform(g)[grid8.index_of(k)]
    assert np.allclose(out, ghat * e, atol=1e-12)


def test_convolution_with_delta_approximant():
    g = TorusGrid(32)
    f = np.cos(g.coords[0]) + 0.5 * np.sin(g.coords[1] + g.coords[2])
    r2 = g.radius**2
    sigma = 0.1
    d = np.exp(-r2 / (2 * sigma**2))
    d /= g.integrate(d)
    out = g.convolve(f, d)
    assert np.max(np.abs(out - f)) < 2e-2


def test_laplacian_of_plane_wave(grid8):
    e = grid8.plane_wave((2, 1, 0))
    assert np.allclose(grid8.laplacian(e), -5 * e, atol=1e-12)


def test_inner_is_antilinear_in_first_slot(grid8):
    e = grid8.plane_wave((1, 0, 0))
    assert np.isclose(grid8.inner(1j * e, e), -1j)
