"""Lanczos approximation of exp(-i dt H) v for Hermitian H given as a matvec."""
from __future__ import annotations

import numpy as np
from scipy.linalg import eigh_tridiagonal


class KrylovBreakdown(RuntimeError):
    """Raised when the Krylov estimate misses the requested tolerance."""


def lanczos_iteration(Afunc, vstart, numiter):
    """Lanczos with full reorthogonalisation.

    Returns the tridiagonal coefficients (alpha, beta) and the Krylov basis as
    columns of V.  Stops early on an invariant subspace.
    """
    vstart = np.asarray(vstart)
    nrm = np.linalg.norm(vstart)
    alpha = np.zeros(numiter)
    beta = np.zeros(max(numiter - 1, 0))
    V = np.zeros((numiter, len(vstart)), dtype=np.result_type(vstart, complex))
    if nrm == 0:
        return alpha[:0], beta[:0], V[:0].T
    V[0] = vstart / nrm
    for j in range(numiter - 1):
        w = Afunc(V[j])
        alpha[j] = np.vdot(w, V[j]).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalisation, done twice for safety
        for _ in range(2):
            w -= V[:j + 1].T @ (V[:j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])):
            return alpha[:j + 1], beta[:j], V[:j + 1].T
        V[j + 1] = w / beta[j]
    alpha[-1] = np.vdot(Afunc(V[-1]), V[-1]).real
    return alpha, beta, V.T


def expm_krylov(Afunc, dt, vstart, numiter=20):
    """exp(-i dt A) vstart via a numiter-dimensional Krylov space.

    Also returns an a-posteriori error estimate from the last Krylov coefficient.
    """
    nrm = np.linalg.norm(vstart)
    if nrm == 0:
        return np.zeros_like(vstart, dtype=complex), 0.0
    alpha, beta, V = lanczos_iteration(Afunc, vstart, numiter)
    if len(alpha) == 1:
        return np.exp(-1j * dt * alpha[0]) * np.asarray(vstart, dtype=complex), 0.0
    w, u_hess = eigh_tridiagonal(alpha, beta)
    coef = u_hess @ (np.exp(-1j * dt * w) * u_hess[0])
    err = abs(coef[-1]) * nrm if len(alpha) == numiter else 0.0
    return nrm * (V @ coef), err


def propagate(Afunc, v0, dt, n_steps, numiter=20, tol=1e-12, callback=None):
    """Repeated Krylov steps; splits a step when the error estimate exceeds tol."""
    v = np.asarray(v0, dtype=complex)
    out = [v]
    for i in range(n_steps):
        v = _step(Afunc, v, dt, numiter, tol, depth=0)
        out.append(v)
        if callback is not None:
            callback(i + 1, v)
    return out


def _step(Afunc, v, dt, numiter, tol, depth):
    w, err = expm_krylov(Afunc, dt, v, numiter)
    if err <= tol:
        return w
    if depth > 12:
        raise KrylovBreakdown(f"Krylov error {err:.3g} above tolerance after step refinement")
    half = _step(Afunc, v, dt / 2, numiter, tol / 2, depth + 1)
    return _step(Afunc, half, dt / 2, numiter, tol / 2, depth + 1)
