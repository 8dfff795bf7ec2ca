import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from quinticbose import fewbody as fb
from quinticbose.potential import PairProfile, ThreeBodyPotential


@pytest.fixture(scope="module")
def lat():
    return fb.Lattice(4)


@pytest.fixture(scope="module")
def system(lat, V):
    model = fb.LatticeModel(lat, V, 3, 3)
    H, basis = model.hamiltonian()
    return model, H, basis


def _modulated(lat):
    c = lat.coords() * lat.spacing
    u = (1 + 0.3 * np.cos(c[:, 0])) * np.exp(0.2j * np.sin(c[:, 1]))
    return u / np.linalg.norm(u)


def test_laplacian_properties(lat):
    L = lat.laplacian().toarray()
    assert np.allclose(L, L.T)
    assert np.linalg.eigvalsh(L).max() < 1e-12
    assert np.abs(L @ np.ones(lat.S)).max() < 1e-12
    # plane waves are eigenvectors with the lattice dispersion
    k = np.array([1, 0, 2])
    pw = lat.plane_wave(k)
    lam = np.sum((2 - 2 * np.cos(k * lat.spacing)) / lat.spacing**2)
    assert np.allclose(-L @ pw, lam * pw)


def test_basis_roundtrip(lat, rng):
    basis = fb.OccupationBasis(lat.S, 3)
    assert basis.dim == 45760
    v = fb.random_state(basis, rng)
    T = basis.to_tensor(v)
    assert np.isclose(np.linalg.norm(T), 1.0, atol=1e-13)
    assert np.allclose(T, np.transpose(T, (1, 0, 2)))
    assert np.allclose(basis.from_tensor(T), v)


def test_dimension_guard():
    with pytest.raises(fb.DimensionError):
        fb.OccupationBasis(216, 4)


def test_two_particle_ground_energy_zero(lat, V):
    H, basis = fb.build_hamiltonian(lat, 2, V, 3)
    assert abs(spla.eigsh(H, k=1, which="SA")[0][0]) < 1e-10


def test_hamiltonian_hermitian(system):
    _, H, _ = system
    assert spla.norm(H - H.conj().T) < 1e-12


def test_uniform_energy_matches_direct_sum(lat, system):
    model, H, basis = system
    u = np.ones(lat.S) / np.sqrt(lat.S)
    T = np.einsum("x,y,z->xyz", u, u, u)
    psi = basis.from_tensor(T)
    direct = model.Vt.sum() / lat.S**3 / 9
    assert np.isclose(np.vdot(psi, H @ psi).real, direct, rtol=1e-12)


def test_free_plane_wave_product(lat):
    V0 = ThreeBodyPotential(PairProfile(0.0, 1.0), 0.1)
    H, basis = fb.build_hamiltonian(lat, 3, V0, 3)
    ks = [np.array([1, 0, 0]), np.array([0, 1, 1]), np.array([2, 0, 1])]
    T = fb.sym_product([lat.plane_wave(k) for k in ks[:2]], lat.plane_wave(ks[2]))
    psi = basis.from_tensor(T)
    psi /= np.linalg.norm(psi)
    E = sum(np.sum((2 - 2 * np.cos(k * lat.spacing)) / lat.spacing**2) for k in ks)
    out = fb.propagate(H, psi, 0.05, 0.5)[-1]
    assert np.abs(out - np.exp(-0.5j * E) * psi).max() < 1e-10


def test_eigenvector_phase_and_accuracy(system):
    _, H, _ = system
    vals, vecs = spla.eigsh(H, k=1, which="SA")
    psi = vecs[:, 0].astype(complex)
    out = fb.propagate(H, psi, 0.01, 0.2)[-1]
    assert np.abs(out - np.exp(-0.2j * vals[0]) * psi).max() < 1e-9


def test_step_halving_and_drift(system, rng):
    _, H, basis = system
    psi = fb.random_state(basis, rng)
    a = fb.propagate(H, psi, 2e-3, 0.05)
    b = fb.propagate(H, psi, 1e-3, 0.05)
    assert np.linalg.norm(a[-1] - b[-1]) <= 1e-8
    E0 = np.vdot(psi, H @ psi).real
    assert abs(np.linalg.norm(a[-1]) - 1) <= 1e-9
    assert abs(np.vdot(a[-1], H @ a[-1]).real - E0) / abs(E0) <= 1e-9


def test_product_state_density(lat):
    u = _modulated(lat)
    T = np.einsum("x,y,z->xyz", u, u, u)
    assert np.allclose(fb.reduced_density(T), 3 * np.outer(u, u.conj()), atol=1e-14)


def test_random_state_density(lat, rng):
    basis = fb.OccupationBasis(lat.S, 3)
    g = fb.reduced_density(basis.to_tensor(fb.random_state(basis, rng)))
    assert np.isclose(np.trace(g).real, 3.0)
    assert np.allclose(g, g.conj().T)
    assert np.linalg.eigvalsh(g)[0] > -1e-12


def test_transform_of_condensate(lat, rng):
    u = _modulated(lat)
    T = np.einsum("x,y,z->xyz", u, u, u)
    phis = fb.un_transform(T, u)
    assert np.isclose(abs(phis[0]), 1.0) and all(np.abs(p).max() < 1e-13 for p in phis[1:])
    v = rng.standard_normal(lat.S) + 1j * rng.standard_normal(lat.S)
    v = fb.projector(u) @ v
    v /= np.linalg.norm(v)
    phis = fb.un_transform(np.einsum("x,y,z->xyz", v, v, v), u)
    assert all(np.abs(p).max() < 1e-13 for p in phis[:3])
    assert np.isclose(np.linalg.norm(phis[3]), 1.0)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_isometry_and_density_identity(seed):
    lat = fb.Lattice(4)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(lat.S) + 1j * rng.standard_normal(lat.S)
    u /= np.linalg.norm(u)
    T = fb.symmetrize(rng.standard_normal((lat.S,) * 3) + 1j * rng.standard_normal((lat.S,) * 3))
    T /= np.linalg.norm(T)
    phis = fb.un_transform(T, u)
    assert abs(fb.sector_norm2(phis) - 1) <= 1e-12
    assert np.abs(fb.un_inverse(phis, u) - T).max() <= 1e-13
    Q = fb.projector(u)
    assert np.abs(Q @ fb.reduced_density(T) @ Q - fb.excitation_density(phis)).max() <= 1e-10


def test_generator_zero_amplitude(lat):
    V0 = ThreeBodyPotential(PairProfile(0.0, 1.0), 0.1)
    u = np.ones(lat.S, complex) / np.sqrt(lat.S)
    rep = fb.generator_equivalence_check(lat, V0, u, 1e-3, 0.1, n_times=2, target=1e-8)
    assert rep.max_residual <= 1e-8
    assert np.all(rep.chi_values == 0)


def test_condensation_at_weak_coupling(lat):
    weak = ThreeBodyPotential(PairProfile(1.0, 2.5).with_amplitude_for_integral(5.0), 0.15)
    H, basis = fb.build_hamiltonian(lat, 3, weak, 3)
    _, vecs = spla.eigsh(H, k=1, which="SA")
    g = fb.reduced_density(basis.to_tensor(vecs[:, 0].astype(complex)))
    assert np.linalg.eigvalsh(g)[-1] / 3 > 0.99
