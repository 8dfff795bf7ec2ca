import numpy as np
import pytest

from quinticbose import hartree as hs
from quinticbose.grid import VOLUME, TorusGrid, random_field
from quinticbose.potential import PairProfile, ThreeBodyPotential, coupling_b0, hartree_nonlinearity

RHO = VOLUME**-1


def smooth(g):
    x, y, z = g.coords
    u = (1 + 0.5 * np.cos(x) + 0.3 * np.cos(y + z)).astype(complex)
    return u / g.l2_norm(u)


@pytest.fixture(scope="module")
def g16():
    return TorusGrid(16)


def test_problem_validation(g16, V):
    with pytest.raises(ValueError):
        hs.EvolutionProblem(g16, hs.HARTREE, 2 * g16.constant(), 1.0, 0.1, V=V)
    with pytest.raises(ValueError):
        hs.EvolutionProblem(g16, hs.NLS, g16.constant(), 1.0, 0.1)
    with pytest.raises(ValueError):
        hs.EvolutionProblem(g16, hs.HARTREE, g16.constant(), 0.1, 1.0, V=V)
    p = hs.EvolutionProblem(g16, hs.NLS, g16.constant(), 1.0, 0.3, b0=1.0)
    assert p.n_steps == 3


def test_free_plane_wave_phase(g16):
    V0 = ThreeBodyPotential(PairProfile(0.0, 1.0), 0.1)
    u0 = g16.plane_wave((1, 0, 0))
    p = hs.EvolutionProblem(g16, hs.HARTREE, u0, 0.7, 0.01, V=V0)
    assert np.allclose(hs.final_state(p), np.exp(-0.7j) * u0, atol=1e-13)
    assert np.isclose(hs.energy(u0, p), 1.0)


def test_free_superposition(g16):
    ks = [(1, 0, 0), (0, 2, -1), (3, 1, 1)]
    amps = np.array([0.6, 0.48, 0.64])
    u0 = sum(a * g16.plane_wave(k) for a, k in zip(amps, ks))
    p = hs.EvolutionProblem(g16, hs.NLS, u0, 1.0, 0.05, b0=0.0)
    exact = sum(a * np.exp(-1j * np.dot(k, k)) * g16.plane_wave(k) for a, k in zip(amps, ks))
    assert np.allclose(hs.final_state(p), exact, atol=1e-10)


def test_constant_data_phase(g16, V):
    u0 = g16.constant()
    b0 = coupling_b0(V, g16)
    p = hs.EvolutionProblem(g16, hs.HARTREE, u0, 1.0, 1e-2, V=V)
    uh = hs.final_state(p)
    assert np.allclose(uh, np.exp(-1j * b0 * RHO**2) * u0, rtol=0, atol=1e-10 * abs(u0.flat[0]))
    pn = hs.EvolutionProblem(g16, hs.NLS, u0, 1.0, 1e-2, b0=b0)
    assert np.max(np.abs(hs.final_state(pn) - uh)) < 1e-13
    assert np.isclose(hs.energy(u0, p), b0 * RHO**2 / 3, rtol=1e-12)


def test_gauge_and_translation(g16, V, rng):
    u0 = random_field(g16, rng, kmax=2)
    p = hs.EvolutionProblem(g16, hs.HARTREE, u0, 0.05, 1e-2, V=V.at(4))
    u1 = hs.final_state(p)
    th = np.exp(0.7j)
    assert np.allclose(hs.final_state(hs.EvolutionProblem(g16, hs.HARTREE, th * u0, 0.05, 1e-2, V=V.at(4))),
                       th * u1, atol=1e-12)
    shift = (3, -2, 5)
    us = np.roll(u0, shift, axis=(0, 1, 2))
    out = hs.final_state(hs.EvolutionProblem(g16, hs.HARTREE, us, 0.05, 1e-2, V=V.at(4)))
    assert np.allclose(out, np.roll(u1, shift, axis=(0, 1, 2)), atol=1e-10)


def test_monitors_and_potential_sign(g16, V):
    u0 = smooth(g16)
    p = hs.EvolutionProblem(g16, hs.HARTREE, u0, 0.1, 1e-3, V=V)
    tr = hs.evolve(p, stride=25, monitor_stride=10)
    assert len(tr.snapshots) == 5
    assert np.max(np.abs(tr.monitors["mass"] - 1)) < 1e-12
    for u in tr.snapshots:
        assert hartree_nonlinearity(u, V, g16).min() >= -1e-12
    rows = list(tr.rows())
    assert len(rows[0]) == 7


def test_richardson_ratio_small_grid(g16, V):
    p = hs.EvolutionProblem(g16, hs.HARTREE, smooth(g16), 0.2, 2e-3, V=V)
    assert 3.5 <= hs.richardson_ratio(p) <= 4.5


def test_blowup_detected(g16):
    p = hs.EvolutionProblem(g16, hs.NLS, smooth(g16), 0.1, 0.05, b0=1.0)
    u = p.initial.copy()
    u[0, 0, 0] = np.nan
    p.initial = u
    with pytest.raises(hs.BlowUpError):
        hs.final_state(p)


def test_gap_trivial_cases(g16, V):
    out = hs.hartree_nls_gap(g16.constant(), V, g16, [1, 16], 0.1, 1e-2)
    # constant data: both sides are pure phases; they differ only through grid vs continuum b0
    b0c = coupling_b0(V)
    for N, err in zip([1, 16], out.error):
        d = (coupling_b0(V.at(N), g16) - b0c) * RHO**2 * 0.1
        assert np.isclose(err, abs(2 * np.sin(d / 2)), rtol=1e-8, atol=1e-14)
    V0 = ThreeBodyPotential(PairProfile(0.0, 2.0), 0.15)
    out = hs.hartree_nls_gap(smooth(g16), V0, g16, [1, 16], 0.1, 1e-2)
    assert np.all(out.error == 0)
    assert np.isnan(out.slope)


def test_resolution_rule(g16, V):
    assert hs.resolved(V.at(1000), g16)
    assert not hs.resolved(V.at(10**5), g16)


def test_loglog_slope():
    N = np.array([1.0, 10.0, 100.0])
    assert np.isclose(hs.loglog_slope(N, 3 * N**-0.5), -0.5)
    assert np.isnan(hs.loglog_slope(N, np.zeros(3)))
