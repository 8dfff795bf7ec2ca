import numpy as np
import pytest

from quinticbose.grid import TorusGrid, random_field
from quinticbose.modes import ModeBasis, wavevectors_by_shell


def test_shell_order_and_pairs():
    ks = wavevectors_by_shell(2)
    assert len(ks) == 18
    k2 = (ks**2).sum(1)
    assert np.all(np.diff(k2) >= 0)
    assert np.all(ks[0::2] == -ks[1::2])


def test_lowest_and_negation():
    b = ModeBasis.lowest(6)
    assert b.size == 6 and np.all(b.k2 == 1)
    neg = b.negation()
    assert np.all(b.wavevectors[neg] == -b.wavevectors)
    with pytest.raises(ValueError):
        ModeBasis.lowest(5)


def test_validation():
    with pytest.raises(ValueError):
        ModeBasis(np.array([[1, 0, 0]]))
    with pytest.raises(ValueError):
        ModeBasis(np.array([[0, 0, 0]]))


def test_projected_basis_is_orthonormal_and_excited(rng):
    g = TorusGrid(8)
    u = random_field(g, rng, kmax=1)
    b = ModeBasis.projected(wavevectors_by_shell(1, include_zero=True), u, g)
    E = b.functions.reshape(b.size, -1)
    G = g.cell_volume * E.conj() @ E.T
    assert np.allclose(G, np.eye(b.size), atol=1e-12)
    assert np.max(np.abs(g.cell_volume * E.conj() @ u.ravel())) < 1e-12
    assert not b.condensate_constant
