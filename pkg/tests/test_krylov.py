import numpy as np
import pytest
from scipy.linalg import expm

from quinticbose import krylov


def _herm(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (A + A.conj().T) / 2


def test_expm_matches_dense(rng):
    A = _herm(rng, 60)
    v = rng.standard_normal(60) + 0j
    w, err = krylov.expm_krylov(lambda x: A @ x, 0.1, v, 30)
    assert np.allclose(w, expm(-0.1j * A) @ v, atol=1e-11)


def test_propagate_refines_steps(rng):
    A = 10 * _herm(rng, 80)
    v = rng.standard_normal(80) + 0j
    v /= np.linalg.norm(v)
    out = krylov.propagate(lambda x: A @ x, v, 0.5, 2, numiter=12, tol=1e-11)
    assert np.allclose(out[-1], expm(-1j * A) @ v, atol=1e-9)
    assert abs(np.linalg.norm(out[-1]) - 1) < 1e-12


def test_invariant_subspace_exit():
    A = np.diag([1.0, 2.0, 3.0])
    v = np.array([1.0, 0, 0], dtype=complex)
    w, err = krylov.expm_krylov(lambda x: A @ x, 1.0, v, 10)
    assert np.allclose(w, np.exp(-1j) * v)
    assert err == 0.0


def test_breakdown_signal(rng):
    A = 1e6 * _herm(rng, 40)
    with pytest.raises(krylov.KrylovBreakdown):
        krylov.propagate(lambda x: A @ x, np.ones(40, complex), 10.0, 1, numiter=3, tol=1e-14)
