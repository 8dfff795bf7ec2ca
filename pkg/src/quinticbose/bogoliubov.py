"""Bogoliubov generator kernels (h, K1, K2), their N-scaling, the (gamma, alpha)
density-matrix dynamics and the pairing-term certification."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .grid import TorusGrid, VOLUME
from .modes import ModeBasis
from .potential import (ThreeBodyPotential, hartree_nonlinearity, partial_integral_W2,
                        sampled_profile, two_point_transform)

log = logging.getLogger(__name__)

EPSILON = 0.05
DENSE_GRID_LIMIT = 16


class PreconditionViolated(ValueError):
    pass


class InstabilityError(RuntimeError):
    pass


@dataclass
class PairKernels:
    """Mode matrices h_pq = <e_p, h e_q>, K1_pq = <e_p, K1 e_q>, K2_pq = <<e_p e_q | K2>>."""

    h: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    basis: ModeBasis | None = None

    @property
    def A(self) -> np.ndarray:
        return self.h + self.K1

    def shifted(self, omega: float) -> "PairKernels":
        """Kernels of the generator minus omega times the number operator."""
        return replace(self, h=self.h - omega * np.eye(len(self.h)))

    def check(self, tol: float = 1e-10):
        for name, M in (("h", self.h), ("K1", self.K1)):
            if np.abs(M - M.conj().T).max() > tol * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} is not self-adjoint")
        if np.abs(self.K2 - self.K2.T).max() > tol * max(1.0, np.abs(self.K2).max()):
            raise ValueError("K2 is not symmetric")


def build_kernels(u: np.ndarray, V: ThreeBodyPotential, basis: ModeBasis,
                  grid: TorusGrid) -> PairKernels:
    """Mode matrices of h = -Delta + F_u, K1 = Q K1~ Q and K2 = (Q x Q) K2~ by grid quadrature."""
    u = np.asarray(grid.check(u), dtype=complex)
    funcs = basis.basis_functions(grid)
    if basis.functions is None and not np.allclose(u, u.flat[0]):
        raise ValueError("plain plane-wave modes require the constant condensate")
    h3 = grid.cell_volume
    M = len(funcs)
    F = hartree_nonlinearity(u, V, grid)
    m = partial_integral_W2(V, np.abs(u) ** 2, grid)
    E = funcs.reshape(M, -1)
    hE = np.array([grid.laplacian(f) * -1 + F * f for f in funcs]).reshape(M, -1)
    K1E = np.array([u * m.apply(np.conj(u) * f) for f in funcs]).reshape(M, -1)
    K2E = np.array([u * m.apply(u * np.conj(f)) for f in funcs]).reshape(M, -1)
    h = h3 * E.conj() @ hE.T
    K1 = h3 * E.conj() @ K1E.T
    # K2_pq = int int conj(e_p(x)) conj(e_q(y)) K2(x, y): column q holds u m (u conj e_q)
    K2 = h3 * E.conj() @ K2E.T
    out = PairKernels(0.5 * (h + h.conj().T), 0.5 * (K1 + K1.conj().T), 0.5 * (K2 + K2.T), basis)
    return out


def constant_condensate_kernels(V: ThreeBodyPotential, basis: ModeBasis,
                                grid: TorusGrid) -> PairKernels:
    """Closed form for u = (2 pi)^{-3/2}: K1 diagonal rho^2 W_hat(k), K2_{k,-k} = rho^2 W_hat(k)."""
    rho = VOLUME**-1
    W = two_point_transform(V, grid)
    ks = basis.wavevectors
    Wk = np.array([W[grid.index_of(k)] for k in ks])
    F = rho**2 * W[0, 0, 0] / 2     # rho^2 b0 with b0 = W_hat(0) / 2
    M = len(ks)
    K2 = np.zeros((M, M), dtype=complex)
    K2[np.arange(M), basis.negation()] = rho**2 * Wk
    return PairKernels(np.diag(basis.k2 + F).astype(complex), np.diag(rho**2 * Wk).astype(complex),
                       K2, basis)


# -- kernel scaling --------------------------------------------------------------------

def _q_both(K, u, h3):
    """(Q x Q) K for a dense two-point array K[x, y] and Q = 1 - |u><u|."""
    uv = u.ravel()
    a = h3 * (uv.conj() @ K)                # int conj(u(x')) K(x', y) dx'
    K = K - np.outer(uv, a)
    b = h3 * (K @ uv.conj())                # int K(x, y') conj(u(y')) dy'
    return K - np.outer(b, uv)


def _weighted_hs2(K, grid: TorusGrid, s: float) -> float:
    """|| (1 - Delta_x)^s K ||_HS^2 with the weight acting on the first variable."""
    n = grid.n
    h3 = grid.cell_volume
    if s == 0:
        return float(h3 * h3 * np.sum(np.abs(K) ** 2))
    Kf = sfft.fftn(K.reshape(n, n, n, -1), axes=(0, 1, 2))
    w = grid.sobolev_weight(2 * s)[..., None]
    # Parseval in x: h^3 sum_x |f|^2 = h^3 / n^3 sum_k |fft f|^2
    return float(h3 * h3 / grid.size * np.sum(w * np.abs(Kf) ** 2))


@dataclass
class KernelScalingRow:
    N: int
    hs_K2tilde: float
    hs_K2_weighted: float
    hs_K2tilde_34: float
    hs_kz: float
    resolved: bool


@dataclass
class KernelScalingReport:
    rows: list
    exponents: dict = field(default_factory=dict)


def kernel_norms(u: np.ndarray, V: ThreeBodyPotential, grid: TorusGrid, z_samples=None) -> dict:
    if grid.n > DENSE_GRID_LIMIT:
        raise MemoryError("dense kernels are limited to 16^3 grids")
    u = np.asarray(grid.check(u), dtype=complex)
    h3 = grid.cell_volume
    m = partial_integral_W2(V, np.abs(u) ** 2, grid)
    uv = u.ravel()
    K = m.dense().astype(complex)
    K *= uv[:, None]
    K *= uv[None, :]
    out = {"hs_K2tilde": _weighted_hs2(K, grid, 0.0),
           "hs_K2tilde_34": _weighted_hs2(K, grid, -0.75 - EPSILON)}
    K = _q_both(K, u, h3)
    out["hs_K2_weighted"] = _weighted_hs2(K, grid, -0.5)
    del K
    # k_z(x, y) = u(x) u(y) V_N(x - y, x - z) at a few sampled z
    Wm = m.shift_matrix()
    w = sampled_profile(V, grid).ravel()
    if z_samples is None:
        z_samples = [0, grid.size // 2 + grid.n // 2 + grid.n * grid.n // 4]
    vals = []
    for z in z_samples:
        wz = Wm[:, z]                               # w_N(x - z)
        kz = (Wm * wz[:, None] + Wm * wz[None, :] + np.outer(wz, wz)) / 3.0
        kz = kz * uv[:, None] * uv[None, :]
        vals.append(_weighted_hs2(kz, grid, -0.5))
    out["hs_kz"] = float(np.mean(vals))
    del w
    return out


def kernel_scaling_report(u: np.ndarray, V: ThreeBodyPotential, grid: TorusGrid, N_list,
                          z_samples=None) -> KernelScalingReport:
    from .hartree import loglog_slope, resolved

    rows = []
    for N in N_list:
        VN = V.at(N)
        if VN.is_zero:
            rows.append(KernelScalingRow(N, 0.0, 0.0, 0.0, 0.0, True))
            continue
        d = kernel_norms(u, VN, grid, z_samples)
        rows.append(KernelScalingRow(N, d["hs_K2tilde"], d["hs_K2_weighted"], d["hs_K2tilde_34"],
                                     d["hs_kz"], resolved(VN, grid)))
    ok = [r for r in rows if r.resolved]
    Ns = [r.N for r in ok]
    exps = {k: loglog_slope(Ns, [getattr(r, k) for r in ok])
            for k in ("hs_K2tilde", "hs_K2_weighted", "hs_K2tilde_34", "hs_kz")}
    return KernelScalingReport(rows, exps)


# -- density matrices -------------------------------------------------------------------

@dataclass
class BogoliubovState:
    gamma: np.ndarray
    alpha: np.ndarray
    time: float = 0.0

    @classmethod
    def vacuum(cls, M: int) -> "BogoliubovState":
        return cls(np.zeros((M, M), complex), np.zeros((M, M), complex), 0.0)

    def purity_defect(self) -> float:
        """|| alpha conj(alpha) - gamma (1 + gamma) ||_F (zero for pure quasi-free states)."""
        g, a = self.gamma, self.alpha
        return float(np.linalg.norm(a @ a.conj() - g @ (np.eye(len(g)) + g)))


def density_rhs(gamma, alpha, A, K):
    """Time derivatives for gamma_pq = <a*_q a_p>, alpha_pq = <a_p a_q>.

    i gamma' = A gamma - gamma A + K conj(alpha) - alpha conj(K)
    i alpha' = A alpha + alpha A^T + K + K gamma^T + gamma K
    with A = h + K1.
    """
    dg = A @ gamma - gamma @ A + K @ alpha.conj() - alpha @ K.conj()
    da = A @ alpha + alpha @ A.T + K + K @ gamma.T + gamma @ K
    return -1j * dg, -1j * da


@dataclass
class DensityTrajectory:
    times: np.ndarray
    states: list
    number: np.ndarray
    kinetic: np.ndarray
    purity: np.ndarray


def evolve_density_matrices(state: BogoliubovState,
                            kernels: PairKernels | Callable[[float], PairKernels],
                            dt: float, t_final: float, weights: np.ndarray | None = None,
                            check_halving: bool = False, halving_tol: float = 1e-6) -> DensityTrajectory:
    """Classical RK4 for the (gamma, alpha) system.

    ``kernels`` is either fixed PairKernels or a callable t -> PairKernels
    (rebuilt from the condensate trajectory).  ``weights`` are the one-body
    weights 1 + |k|^2 of the kinetic monitor.
    """
    get = kernels if callable(kernels) else (lambda t, k=kernels: k)
    n = int(round(t_final / dt))
    g, a = state.gamma.astype(complex), state.alpha.astype(complex)
    t0 = state.time
    M = len(g)
    w = np.ones(M) if weights is None else np.asarray(weights)
    states, num, kin, pur = [], [], [], []

    def record(g, a, t):
        s = BogoliubovState(g.copy(), a.copy(), t)
        states.append(s)
        num.append(np.trace(g).real)
        kin.append(np.sum(w * np.diag(g).real))
        pur.append(s.purity_defect())

    record(g, a, t0)
    for i in range(n):
        t = t0 + i * dt
        g, a = _rk4(g, a, t, dt, get)
        record(g, a, t + dt)
    traj = DensityTrajectory(t0 + dt * np.arange(n + 1), states, np.array(num), np.array(kin),
                             np.array(pur))
    if check_halving:
        half = evolve_density_matrices(state, kernels, dt / 2, t_final, weights)
        sa, sb = traj.states[-1], half.states[-1]
        diff = np.linalg.norm(sa.gamma - sb.gamma) + np.linalg.norm(sa.alpha - sb.alpha)
        if diff > halving_tol:
            raise InstabilityError(f"step-halving disagreement {diff:.3g}")
    return traj


def _rk4(g, a, t, dt, get):
    def f(g, a, t):
        k = get(t)
        return density_rhs(g, a, k.A, k.K2)

    k1 = f(g, a, t)
    k2 = f(g + 0.5 * dt * k1[0], a + 0.5 * dt * k1[1], t + 0.5 * dt)
    k3 = f(g + 0.5 * dt * k2[0], a + 0.5 * dt * k2[1], t + 0.5 * dt)
    k4 = f(g + dt * k3[0], a + dt * k3[1], t + dt)
    g = g + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    a = a + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return g, a


def pair_closed_form(e: float, kappa: complex, t):
    """<a*a>(t) from vacuum for e (a*a + b*b) + kappa a*b* + h.c."""
    t = np.asarray(t, dtype=float)
    d = abs(kappa) ** 2 - e * e
    if d > 0:
        lam = np.sqrt(d)
        return abs(kappa) ** 2 / d * np.sinh(lam * t) ** 2
    if d < 0:
        om = np.sqrt(-d)
        return abs(kappa) ** 2 / -d * np.sin(om * t) ** 2
    return abs(kappa) ** 2 * t * t


# -- pairing bound ------------------------------------------------------------------------

def pairing_precondition(H_diag, K) -> float:
    """Largest eigenvalue of H^{-1/2} K H^{-1} K^* H^{-1/2}; the bound needs <= 1."""
    s = 1.0 / np.sqrt(np.asarray(H_diag, dtype=float))
    B = s[:, None] * np.asarray(K) * s[None, :]
    return float(np.linalg.norm(B, 2) ** 2)


@dataclass
class PairingCertificate:
    min_eigenvalue: float
    bound_constant: float
    ground_energy: float
    per_sign: dict


def certify_pairing_bound(H_diag, K, P: int, sign: int | None = None,
                          check_precondition: bool = True) -> PairingCertificate:
    """Smallest eigenvalue of dGamma(H) -+ (1/2) sum (K a*a* + h.c.) + (1/2)||H^{-1/2} K||_HS^2
    on the Fock space truncated at P particles (modes taken as real functions)."""
    from .fock import FockBasis, dGamma, pair_creation

    H_diag = np.asarray(H_diag, dtype=float)
    K = np.atleast_2d(np.asarray(K))
    if np.any(H_diag <= 0):
        raise PreconditionViolated("H must be positive")
    if np.abs(K - K.T).max() > 1e-12 * max(1.0, np.abs(K).max()):
        raise ValueError("K must be symmetric")
    if check_precondition and pairing_precondition(H_diag, K) > 1 + 1e-12:
        raise PreconditionViolated("K H^{-1} K^* <= H fails")
    M = len(H_diag)
    basis = FockBasis(M, P)
    dG = dGamma(basis, np.diag(H_diag)).dense()
    pair = pair_creation(basis, K).dense()
    pair = 0.5 * (pair + pair.conj().T)
    const = 0.5 * float(np.sum(np.abs(K) ** 2 / H_diag[:, None]))
    res = {}
    for s in ((+1, -1) if sign is None else (sign,)):
        A = dG - s * pair
        res[s] = float(np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0])
    ground = min(res.values())
    return PairingCertificate(ground + const, const, ground, res)


def random_pairing_instance(M: int, rng: np.random.Generator, target: float = 0.9):
    """Random positive diagonal H and symmetric K scaled so the precondition holds."""
    H = rng.uniform(0.5, 3.0, size=M)
    K = rng.standard_normal((M, M))
    K = 0.5 * (K + K.T)
    K *= np.sqrt(target / pairing_precondition(H, K))
    return H, K
