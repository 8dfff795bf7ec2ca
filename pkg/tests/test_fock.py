import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quinticbose import fock
from quinticbose.grid import VOLUME, TorusGrid
from quinticbose.modes import ModeBasis
from quinticbose.potential import PairProfile, ThreeBodyPotential, coupling_b0


@pytest.fixture(scope="module")
def small():
    modes = ModeBasis.lowest(4)
    return fock.FockBasis.for_modes(modes, 6)


def test_dimension(small):
    assert small.dim == fock.FockBasis.expected_dim(4, 6) == 210
    assert np.all(small.lookup(small.states) == np.arange(small.dim))


def test_ladder_examples(small):
    a0 = fock.ladder(small, 0, "annihilate")
    assert np.linalg.norm(a0 @ small.vacuum()) == 0
    n3 = small.lookup(np.array([[3, 0, 0, 0]]))[0]
    v = np.zeros(small.dim, complex)
    v[n3] = 1
    ad = fock.ladder(small, 0, "create")
    assert np.allclose((ad @ a0) @ v, 3 * v)


def test_ccr_below_cutoff(small):
    low = small.sector_mask(small.P - 1)
    for p in range(4):
        for q in range(4):
            a = fock.ladder(small, p, "annihilate").matrix
            ad = fock.ladder(small, q, "create").matrix
            C = (a @ ad - ad @ a).toarray()[np.ix_(low, low)]
            assert np.allclose(C, np.eye(low.sum()) * (p == q), atol=1e-14)


def test_dgamma_examples(small, rng):
    N = fock.dGamma(small, np.eye(4))
    assert np.allclose(N.matrix.diagonal(), small.sectors)
    k = fock.dGamma(small, np.diag(1 + small.modes.k2))
    assert np.allclose(k.matrix.diagonal(), small.states @ (1 + small.modes.k2))
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    A = A + A.conj().T
    dA = fock.dGamma(small, A)
    assert dA.hermiticity_defect() < 1e-14
    one = np.flatnonzero(small.sectors == 1)
    ev = np.linalg.eigvalsh(dA.dense()[np.ix_(one, one)])
    assert np.allclose(ev, np.linalg.eigvalsh(A), atol=1e-12)
    B = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    assert np.allclose(fock.dGamma(small, B).H.dense(), fock.dGamma(small, B.conj().T).dense())


def test_leak_is_recorded(small):
    ad = fock.ladder(small, 0, "create")
    assert ad.leakage_norm > 0
    top = np.flatnonzero(small.sectors == small.P)[0]
    v = np.zeros(small.dim, complex)
    v[top] = 1
    assert ad.leakage(v) > 0


@pytest.mark.parametrize("k", [((1, 0, 0), (0, 1, 0), (0, 0, -1), (1, 1, 0), (0, 0, 0), (0, 0, -1)),
                               ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, 0, 0), (0, 1, 0), (0, 0, 0)),
                               ((2, 1, 0), (0, 0, 0), (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 0, 0))])
def test_six_point_against_direct_sum(V, k):
    g = TorusGrid(8)
    VN = V.at(20)
    c = fock.ConstantCondensateCoupling(VN, g)
    fast = c.six_point(*(np.array(x) for x in k))
    slow = fock.direct_six_point(VN, g, *k)
    assert abs(fast - slow) <= 1e-10 * max(abs(slow), 1e-300) + 1e-18


def test_six_point_momentum_conservation(V):
    g = TorusGrid(8)
    c = fock.ConstantCondensateCoupling(V, g)
    k = [np.array(x) for x in ((1, 0, 0), (0, 0, 0), (0, 0, 0), (0, 0, 0), (0, 0, 0), (0, 0, 0))]
    assert c.six_point(*k) == 0
    assert abs(fock.direct_six_point(V, g, *[tuple(x) for x in k])) < 1e-12


@pytest.fixture(scope="module")
def bundle(small, V):
    g = TorusGrid(16)
    return fock.assemble_generator(g.constant(), V.at(64), small, 64.0, g)


def test_chi_and_vacuum_expectation(bundle, V):
    g = TorusGrid(16)
    b0 = coupling_b0(V.at(64), g)
    assert np.isclose(bundle.c0, 2 * b0 * VOLUME**-2, rtol=1e-12)
    assert np.isclose(bundle.chi, (2 * 64 + 3) / 6 * bundle.c0, rtol=1e-12)
    # direct triple quadrature of <u^3, V_N u^3> for the constant condensate
    from quinticbose.potential import hartree_nonlinearity
    u = g.constant()
    direct = 2 * g.integrate(hartree_nonlinearity(u, V.at(64), g) * np.abs(u) ** 2).real
    assert np.isclose(bundle.c0, direct, rtol=1e-8)
    vac = bundle.basis.vacuum()
    R0 = bundle.R[0]
    assert np.isclose(np.vdot(vac, R0 @ vac).real, bundle.c0 / (3 * 64), rtol=1e-12)


def test_generator_self_adjoint(bundle):
    assert bundle.bogoliubov.hermiticity_defect() < 1e-12
    for j in range(7):
        assert bundle.symmetrised(j).hermiticity_defect() < 1e-12


def test_no_transitions_above_N(V):
    g = TorusGrid(16)
    b = fock.FockBasis.for_modes(ModeBasis.lowest(4), 7)
    bd = fock.assemble_generator(g.constant(), V.at(3), b, 3.0, g)
    G = bd.total().matrix.tocoo()
    bad = (b.sectors[G.col] <= 3) & (b.sectors[G.row] > 3) & (np.abs(G.data) > 1e-14)
    assert not bad.any()


def test_zero_amplitude_generator(small):
    g = TorusGrid(16)
    V0 = ThreeBodyPotential(PairProfile(0.0, 1.0), 0.1)
    bd = fock.assemble_generator(g.constant(), V0, small, 10.0, g)
    assert bd.chi == 0
    for R in bd.R:
        assert abs(R.matrix).max() == 0 if R.matrix.nnz else True
    kin = fock.dGamma(small, np.diag(small.modes.k2))
    assert np.allclose(bd.bogoliubov.dense(), kin.dense())
    reps = fock.certify_error_bounds(bd, 3)
    for r in reps:
        assert r.minimal_c == 0
        assert np.isclose(r.min_eig - r.unshifted_min, 3 * 10.0 ** (4 * 0.1 - 1) / r.eta)


def test_condensate_guard(small, V, rng):
    g = TorusGrid(16)
    u = g.constant() * (1 + 0.1 * np.cos(g.coords[0]))
    with pytest.raises(fock.UnsupportedCondensateError):
        fock.assemble_generator(u / g.l2_norm(u), V, small, 10.0, g)


def test_r6_positive(bundle):
    S = bundle.symmetrised(6).block(3)
    assert np.linalg.eigvalsh(S)[0] >= -1e-10


def test_eta_threshold():
    assert np.isclose(fock.eta_threshold(3, 64, 0.1), max(np.sqrt(3 * 64**-0.8), np.sqrt(27 * 64**-2.5),
                                                         9 * 64**-1.6))


def test_evolve_truncated_number_generator(small):
    Nop = fock.number_operator(small)
    rng = np.random.default_rng(0)
    v = (rng.standard_normal(small.dim) + 1j * rng.standard_normal(small.dim)) * small.sector_mask(4)
    v /= np.linalg.norm(v)
    tr = fock.evolve_truncated(Nop, v, 4, 0.1, 1.0)
    assert np.allclose(tr.states[-1], np.exp(-1j * small.sectors) * v, atol=1e-12)
    assert np.allclose(tr.histogram[0], tr.histogram[-1])
    assert tr.norm_drift < 1e-12


def test_full_versus_quadratic_generator(V):
    g = TorusGrid(16)
    b = fock.FockBasis.for_modes(ModeBasis.lowest(4), 6)
    bd = fock.assemble_generator(g.constant(), V.at(10**4), b, 1e4, g)
    quad = fock.evolve_truncated(bd.rotating(bd.bogoliubov), b.vacuum(), 6, 0.01, 0.2)
    full = fock.evolve_truncated(bd.rotating(bd.total()), b.vacuum(), 6, 0.01, 0.2)
    diff = np.linalg.norm(full.states[-1] - quad.states[-1])
    size = sum(0.01 * np.linalg.norm(bd.total().matrix @ s - bd.bogoliubov.matrix @ s) for s in quad.states[1:])
    assert diff <= 10 * size + 1e-12


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 60), N=st.integers(3, 50))
def test_creation_never_exceeds_N(n, N):
    # with c = N - n, a term creating d net excitations must vanish when n + d > N;
    # for R_2 the quadratic generator contributes the +1 that the table subtracts
    c = float(N - n)
    for j, terms in fock.GENERATOR_TERMS.items():
        for t in terms:
            d = t.n_create - t.n_annihilate
            if d <= 0 or n + d <= N:
                continue
            full = float(t.sector_factor(np.array(c), float(N))) + (1.0 if j == 2 else 0.0)
            assert full == 0.0
