"""Exact dynamics of two or three bosons on a small periodic lattice, and brute-force
checks of the condensate/excitation transform and the transformed generator.

One-body space is C^S with the plain l^2 inner product.  n-particle excitation
vectors are symmetric tensors with n axes of length S.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from . import krylov
from .fock import GENERATOR_TERMS, SlotTerm, chi_phase, r0_scalar
from .potential import ThreeBodyPotential

MAX_DIM = 3_000_000


class DimensionError(ValueError):
    pass


# -- lattice -----------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    sites_per_dim: int

    def __post_init__(self):
        if not 4 <= self.sites_per_dim <= 6:
            raise ValueError("sites_per_dim must lie in [4, 6]")

    @property
    def L(self) -> int:
        return self.sites_per_dim

    @property
    def S(self) -> int:
        return self.L**3

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.L

    def coords(self) -> np.ndarray:
        i = np.indices((self.L,) * 3).reshape(3, -1).T
        return i

    def laplacian(self) -> sp.csr_matrix:
        """Nearest-neighbour periodic Laplacian scaled by spacing^-2 (negative semidefinite)."""
        L = self.L
        one = sp.diags([np.ones(L - 1), np.ones(L - 1), [1.0], [1.0], -2 * np.ones(L)],
                       [1, -1, L - 1, -(L - 1), 0], shape=(L, L))
        I = sp.identity(L)
        lap = (sp.kron(sp.kron(one, I), I) + sp.kron(sp.kron(I, one), I) + sp.kron(sp.kron(I, I), one))
        return (lap / self.spacing**2).tocsr()

    def displacement(self, i, j) -> np.ndarray:
        """Minimal-image displacement x_i - x_j in physical units."""
        c = self.coords()
        d = (c[i] - c[j]) % self.L
        d = np.where(d > self.L // 2, d - self.L, d)
        return d * self.spacing

    def pair_matrix(self, V: ThreeBodyPotential) -> np.ndarray:
        """w_N(x - y) at minimal-image lattice displacements."""
        i, j = np.meshgrid(np.arange(self.S), np.arange(self.S), indexing="ij")
        return V.w_N(self.displacement(i, j))

    def plane_wave(self, k) -> np.ndarray:
        c = self.coords() * self.spacing
        return np.exp(1j * c @ np.asarray(k, dtype=float)) / np.sqrt(self.S)


def interaction_tensor(lattice: Lattice, V: ThreeBodyPotential, N_particles: int,
                       N_scaling: int) -> np.ndarray:
    """Effective three-body tensor (N_p^2 / N_s^2) V_{N_s}(x - y, x - z) on the lattice.

    With this rescaling the 1/N^2 coupling of the Hamiltonian uses N = N_particles
    while the potential profile follows N_scaling.
    """
    V.require_pair_product()
    Wp = lattice.pair_matrix(V.at(N_scaling))
    # Wp is symmetric: w(x-y) w(x-z) + w(x-y) w(y-z) + w(x-z) w(y-z)
    T = (Wp[:, :, None] * Wp[:, None, :] + Wp[:, :, None] * Wp[None, :, :]
         + Wp[:, None, :] * Wp[None, :, :]) / 3.0
    return T * (N_particles**2 / N_scaling**2)


# -- occupation basis ----------------------------------------------------------------

class OccupationBasis:
    """Sorted site tuples (i_1 <= ... <= i_N) for N bosons on S sites."""

    def __init__(self, S: int, N: int):
        dim = comb(S + N - 1, N)
        if dim > MAX_DIM:
            raise DimensionError(f"dimension {dim} exceeds {MAX_DIM}")
        self.S, self.N = S, N
        self.tuples = np.array(list(itertools.combinations_with_replacement(range(S), N)),
                               dtype=np.int64).reshape(-1, N)
        self.codes = self.encode(self.tuples)
        order = np.argsort(self.codes)
        self._order, self._sorted = order, self.codes[order]

    @property
    def dim(self) -> int:
        return len(self.tuples)

    def encode(self, t):
        t = np.sort(t, axis=1)
        return t @ (self.S ** np.arange(self.N - 1, -1, -1, dtype=np.int64))

    def lookup(self, t):
        c = self.encode(t)
        pos = np.searchsorted(self._sorted, c)
        return self._order[pos]

    def multiplicity_norm(self) -> np.ndarray:
        """sqrt(prod n_x! / N!) per basis state (tensor entry per unit coefficient)."""
        out = np.empty(self.dim)
        for i, t in enumerate(self.tuples):
            _, counts = np.unique(t, return_counts=True)
            out[i] = np.sqrt(np.prod([factorial(c) for c in counts]) / factorial(self.N))
        return out

    def to_tensor(self, coeffs: np.ndarray) -> np.ndarray:
        T = np.zeros((self.S,) * self.N, dtype=complex)
        vals = coeffs * self._mult()
        for perm in itertools.permutations(range(self.N)):
            T[tuple(self.tuples[:, p] for p in perm)] = vals
        return T

    def from_tensor(self, T: np.ndarray) -> np.ndarray:
        return T[tuple(self.tuples[:, k] for k in range(self.N))] / self._mult()

    def _mult(self):
        if not hasattr(self, "_mult_cache"):
            self._mult_cache = self.multiplicity_norm()
        return self._mult_cache


@dataclass
class FewBodyState:
    basis: OccupationBasis
    coeffs: np.ndarray

    @property
    def N_particles(self) -> int:
        return self.basis.N

    @property
    def dim(self) -> int:
        return self.basis.dim

    def tensor(self) -> np.ndarray:
        return self.basis.to_tensor(self.coeffs)

    @classmethod
    def from_tensor(cls, basis: OccupationBasis, T: np.ndarray) -> "FewBodyState":
        return cls(basis, basis.from_tensor(T))


def one_body_in_occupation(basis: OccupationBasis, T: sp.spmatrix) -> sp.csr_matrix:
    """dGamma(T) = sum_xy T_yx a*_y a_x on the occupation basis."""
    Tc = sp.csc_matrix(T)
    rows, cols, vals = [], [], []
    tup = basis.tuples
    N = basis.N
    for slot in range(N):
        # act on the particle in position `slot` only where it starts a run of equal sites,
        # so each occupied site is visited once
        first = np.ones(basis.dim, bool) if slot == 0 else tup[:, slot] != tup[:, slot - 1]
        idx = np.flatnonzero(first)
        x = tup[idx, slot]
        n_x = (tup[idx] == x[:, None]).sum(1)
        # all hops x -> y with T[y, x] != 0
        start, end = Tc.indptr[x], Tc.indptr[x + 1]
        counts = end - start
        rep_state = np.repeat(idx, counts)
        rep_nx = np.repeat(n_x, counts)
        ptr = np.concatenate([np.arange(s, e) for s, e in zip(start, end)]) if len(idx) else np.zeros(0, int)
        ys = Tc.indices[ptr]
        tv = Tc.data[ptr]
        new = tup[rep_state].copy()
        new[:, slot] = ys
        # occupation of y after the hop
        n_y = (np.sort(new, axis=1) == ys[:, None]).sum(1)
        rows.append(basis.lookup(new))
        cols.append(rep_state)
        vals.append(tv * np.sqrt(rep_nx * n_y))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(basis.dim, basis.dim))


def build_hamiltonian(lattice: Lattice, N_particles: int, V: ThreeBodyPotential,
                      N_scaling: int) -> tuple[sp.csr_matrix, OccupationBasis]:
    """Sum_i (-Delta_i) + N_p^{-2} sum_{i<j<k} V~(x_i - x_j, x_i - x_k) in the occupation basis."""
    if N_particles not in (2, 3):
        raise ValueError("N_particles must be 2 or 3")
    basis = OccupationBasis(lattice.S, N_particles)
    H = one_body_in_occupation(basis, -lattice.laplacian())
    if N_particles == 3 and not V.is_zero:
        Vt = interaction_tensor(lattice, V, N_particles, N_scaling)
        t = basis.tuples
        diag = Vt[t[:, 0], t[:, 1], t[:, 2]] / N_particles**2
        H = H + sp.diags(diag)
    H = H.tocsr()
    H.sum_duplicates()
    return H, basis


def propagate(H: sp.spmatrix, psi0: np.ndarray, dt: float, t_final: float, numiter: int = 30,
              tol: float = 1e-12) -> list:
    """Lanczos-exponential steps of i dpsi/dt = H psi; returns the states at each step."""
    n = int(round(t_final / dt))
    return krylov.propagate(lambda v: H @ v, psi0, dt, n, numiter=numiter, tol=tol)


def reduced_density(T: np.ndarray) -> np.ndarray:
    """gamma(x, y) = N sum_rest psi(x, rest) conj(psi(y, rest)) for a normalised symmetric tensor."""
    N = T.ndim
    M = T.reshape(T.shape[0], -1)
    return N * M @ M.conj().T


# -- tensor second quantisation -------------------------------------------------------------

def symmetrize(T: np.ndarray) -> np.ndarray:
    if T.ndim < 2:
        return T
    perms = list(itertools.permutations(range(T.ndim)))
    return sum(np.transpose(T, p) for p in perms) / len(perms)


def sym_product(f_list, T) -> np.ndarray:
    """Sym(f_1 x ... x f_k x T)."""
    out = T
    for f in reversed(f_list):
        out = np.multiply.outer(f, out)
    return symmetrize(out)


def projector(u: np.ndarray) -> np.ndarray:
    return np.eye(len(u)) - np.outer(u, u.conj())


def apply_on_axes(A: np.ndarray, T: np.ndarray, axes) -> np.ndarray:
    for ax in axes:
        T = np.moveaxis(np.tensordot(A, T, axes=([1], [ax])), 0, ax)
    return T


def dgamma_tensor(A: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Second quantisation of a one-body operator on an n-particle tensor."""
    T = np.asarray(T, dtype=complex)
    out = np.zeros_like(T)
    for ax in range(T.ndim):
        out += np.moveaxis(np.tensordot(A, T, axes=([1], [ax])), 0, ax)
    return out


def un_transform(T: np.ndarray, u: np.ndarray) -> list:
    """Forward transform: phi_k = sqrt(C(N, k)) Q^{(x)k} <u^{(x)(N-k)}, Psi>."""
    N = T.ndim
    if abs(np.linalg.norm(u) - 1) > 1e-12:
        raise ValueError("condensate must be normalised")
    Q = projector(u)
    out = []
    for k in range(N + 1):
        R = T
        for _ in range(N - k):
            R = np.tensordot(u.conj(), R, axes=([0], [0]))
        R = apply_on_axes(Q, np.asarray(R), range(k))
        out.append(np.sqrt(comb(N, k)) * R)
    return out


def un_inverse(phis: list, u: np.ndarray) -> np.ndarray:
    """Inverse transform: Psi = sum_k sqrt(C(N, k)) Sym(u^{(x)(N-k)} x phi_k)."""
    N = len(phis) - 1
    out = np.zeros((len(u),) * N, dtype=complex)
    for k, phi in enumerate(phis):
        out += np.sqrt(comb(N, k)) * sym_product([u] * (N - k), np.asarray(phi, dtype=complex))
    return out


def sector_norm2(phis) -> float:
    return float(sum(np.sum(np.abs(p) ** 2) for p in phis))


def excitation_density(phis) -> np.ndarray:
    """gamma_Phi(x, y) = sum_n n sum_rest phi_n(x, rest) conj(phi_n(y, rest))."""
    S = len(np.atleast_1d(phis[1]))
    g = np.zeros((S, S), dtype=complex)
    for n, p in enumerate(phis):
        if n == 0:
            continue
        M = np.asarray(p).reshape(S, -1)
        g += n * M @ M.conj().T
    return g


# -- transformed generator on the lattice ----------------------------------------------------

@dataclass
class LatticeModel:
    """Lattice, one-body operator and interaction tensor for the structural checks."""

    lattice: Lattice
    V: ThreeBodyPotential
    N_particles: int = 3
    N_scaling: int = 3
    Vt: np.ndarray = field(init=False, repr=False)
    minus_lap: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.Vt = interaction_tensor(self.lattice, self.V, self.N_particles, self.N_scaling)
        self.minus_lap = -self.lattice.laplacian().toarray()

    def hartree_potential(self, u):
        rho = np.abs(u) ** 2
        return 0.5 * np.einsum("xyz,y,z->x", self.Vt, rho, rho)

    def c0(self, u) -> float:
        rho = np.abs(u) ** 2
        return float(np.einsum("xyz,x,y,z->", self.Vt, rho, rho, rho))

    def chi(self, u) -> float:
        return chi_phase(self.N_particles, self.c0(u))

    def hartree_rhs(self, t, y):
        u = y[:-1]
        du = -1j * (self.minus_lap @ u + self.hartree_potential(u) * u)
        return np.concatenate([du, [self.chi(u)]])

    def solve_hartree(self, u0, times, rtol=1e-13, atol=1e-15):
        """u(t) and int_0^t chi at the requested times."""
        times = np.asarray(times, dtype=float)
        y0 = np.concatenate([np.asarray(u0, dtype=complex), [0.0]])
        sol = solve_ivp(self.hartree_rhs, (0.0, float(times.max())), y0, method="DOP853",
                        t_eval=np.sort(times), rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(sol.message)
        order = np.argsort(times)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        Y = sol.y[:, inv]
        return Y[:-1].T, Y[-1].real

    def hamiltonian(self):
        return build_hamiltonian(self.lattice, self.N_particles, self.V, self.N_scaling)

    # -- generator pieces

    def one_body_h(self, u):
        return self.minus_lap + np.diag(self.hartree_potential(u))

    def apply_term(self, term: SlotTerm, phis: list, u: np.ndarray, adjoint: bool = False,
                   unit_factor: bool = False, prefactor: float | None = None) -> list:
        """Action of one slot-pattern term (or its adjoint) on a sector vector."""
        N = self.N_particles
        Nf = float(N)
        S = len(u)
        Q = projector(u)
        slots = [(an, cr) if adjoint else (cr, an) for cr, an in term.slots]
        cr_slots = [s for s in range(3) if slots[s][0]]
        an_slots = [s for s in range(3) if slots[s][1]]
        i, j = len(cr_slots), len(an_slots)
        letters = "xyz"
        pref = term.prefactor(Nf) if prefactor is None else prefactor
        out = [np.zeros((S,) * n, dtype=complex) for n in range(N + 1)]
        ops = [self.Vt]
        subs = ["xyz"]
        for s in range(3):
            if not slots[s][0]:
                ops.append(u.conj())
                subs.append(letters[s])
            if not slots[s][1]:
                ops.append(u)
                subs.append(letters[s])
        for n, phi in enumerate(phis):
            if n < j:
                continue
            n_out = n - j + i
            c_in, c_out = Nf - n, Nf - n_out
            if unit_factor:
                g = 1.0
            else:
                g = float(term.sector_factor(np.array(c_out if adjoint else c_in), Nf))
            if n_out > N:
                # the full generator has zero weight above N (Bogoliubov and R_j parts cancel)
                continue
            if g == 0.0:
                continue
            rest = "abc"[:n - j]
            phi_sub = "".join(letters[s] for s in an_slots) + rest
            out_sub = "".join(letters[s] for s in cr_slots) + rest
            expr = ",".join(subs + [phi_sub]) + "->" + out_sub
            R = np.einsum(expr, *ops, np.asarray(phi), optimize=True)
            R = apply_on_axes(Q, R, range(i))
            norm = np.sqrt(factorial(n) / factorial(n - j) * factorial(n_out) / factorial(n - j))
            out[n_out] = out[n_out] + pref * g * norm * symmetrize(np.asarray(R))
        return out

    def apply_bogoliubov(self, phis, u):
        """B = dGamma(h + K1) + (1/2)(K2 a*a* + h.c.), with h not projected."""
        h = self.one_body_h(u)
        out = [dgamma_tensor(h, p) for p in phis]
        k1 = SlotTerm(((True, False), (False, True), (False, False)), lambda N: 1.0, None)
        k2 = SlotTerm(((True, False), (True, False), (False, False)), lambda N: 1.0, None)
        for part, w, adj in ((k1, 1.0, False), (k2, 0.5, False), (k2, 0.5, True)):
            add = self.apply_term(part, phis, u, adjoint=adj, unit_factor=True)
            out = [a + w * b for a, b in zip(out, add)]
        return out

    def apply_R(self, j, phis, u, adjoint=False):
        out = [np.zeros_like(np.asarray(p, dtype=complex)) for p in phis]
        for term in GENERATOR_TERMS[j]:
            add = self.apply_term(term, phis, u, adjoint=adjoint)
            out = [a + b for a, b in zip(out, add)]
        if j == 0:
            c0 = self.c0(u)
            out = [a + r0_scalar(n, float(self.N_particles), c0) * np.asarray(p)
                   for n, (a, p) in enumerate(zip(out, phis))]
        return out

    def apply_generator(self, phis, u):
        """Transformed generator B + (1/2) sum_j (R_j + R_j^*) on a sector vector."""
        out = self.apply_bogoliubov(phis, u)
        for j in range(7):
            for adj in (False, True):
                add = self.apply_R(j, phis, u, adjoint=adj)
                out = [a + 0.5 * b for a, b in zip(out, add)]
        return out


@dataclass
class EquivalenceReport:
    times: np.ndarray
    residuals: np.ndarray
    max_residual: float
    chi_values: np.ndarray
    norms: np.ndarray
    stencil_step: float = 0.0


def _fd_derivative(samples, delta):
    """Fourth-order central difference from samples at t-2d, t-d, t+d, t+2d."""
    m2, m1, p1, p2 = samples
    return [(-a + 8 * b - 8 * c + d) / (12 * delta) for d, c, b, a in zip(m2, m1, p1, p2)]


def _residuals(model, H, basis, u0, psi0, t_final, n_times, delta, chi_scale):
    times = np.linspace(0.0, t_final, n_times)
    offs = np.array([-2, -1, 1, 2]) * delta
    # shift the earliest window so it stays at t >= 0
    centers = np.maximum(times, 2 * delta)
    all_t = np.concatenate([centers, (centers[:, None] + offs[None, :]).ravel()])
    us, chis = model.solve_hartree(u0, all_t)
    nc = len(centers)
    res, chi_vals, norms = [], [], []
    psi_c = np.asarray(psi0, dtype=complex)
    t_prev = 0.0
    Hf = lambda v: H @ v
    for a, tc in enumerate(centers):
        psi_c = _evolve(Hf, psi_c, tc - t_prev)
        t_prev = tc
        phis_at = []
        for b, off in enumerate(offs):
            k = nc + 4 * a + b
            T = basis.to_tensor(_evolve(Hf, psi_c, off))
            ph = np.exp(-1j * chi_scale * chis[k])
            phis_at.append([ph * p for p in un_transform(T, us[k])])
        deriv = _fd_derivative(phis_at, delta)
        T = basis.to_tensor(psi_c)
        phis = [np.exp(-1j * chi_scale * chis[a]) * p for p in un_transform(T, us[a])]
        gen = model.apply_generator(phis, us[a])
        r = [1j * d - g for d, g in zip(deriv, gen)]
        nrm = np.sqrt(sector_norm2(phis))
        res.append(np.sqrt(sector_norm2(r)) / nrm)
        chi_vals.append(model.chi(us[a]))
        norms.append(nrm)
    return centers, np.array(res), np.array(chi_vals), np.array(norms)


def generator_equivalence_check(lattice: Lattice, V: ThreeBodyPotential, u0: np.ndarray,
                                dt: float = 1e-3, t_final: float = 0.2, *, N_scaling: int = 3,
                                psi0=None, rng=None, n_times: int = 5, chi_scale: float = 1.0,
                                target: float = 1e-5, max_refine: int = 3,
                                model: LatticeModel | None = None, H=None,
                                basis=None) -> EquivalenceReport:
    """max_t || i dPhi/dt - H~ Phi || / ||Phi|| with Phi = e^{-i int chi} U_N(t) Psi(t).

    Psi is propagated exactly with the three-particle Hamiltonian; u(t) and
    int chi follow from the lattice Hartree equation.  ``dt`` is the step of the
    fourth-order derivative stencil; it is halved while the residual exceeds
    ``target`` and still drops like a finite-difference error.  ``chi_scale``
    perturbs the phase (sensitivity probe).  Without ``psi0`` a random
    excitation vector is mapped back through the inverse transform.
    """
    if model is None:
        model = LatticeModel(lattice, V, 3, N_scaling)
    if H is None:
        H, basis = model.hamiltonian()
    u0 = np.asarray(u0, dtype=complex)
    if psi0 is None:
        rng = np.random.default_rng(0) if rng is None else rng
        phis = random_excitation(lattice.S, model.N_particles, u0, rng)
        psi0 = basis.from_tensor(un_inverse(phis, u0))
    delta = dt
    out = _residuals(model, H, basis, u0, psi0, t_final, n_times, delta, chi_scale)
    for _ in range(max_refine):
        if out[1].max() <= target:
            break
        finer = _residuals(model, H, basis, u0, psi0, t_final, n_times, delta / 2, chi_scale)
        improved = finer[1].max() < out[1].max() / 4
        delta /= 2
        out = finer
        if not improved:
            break
    centers, res, chi_vals, norms = out
    return EquivalenceReport(centers, res, float(res.max()), chi_vals, norms, delta)


def _evolve(Hf, v, t):
    if t == 0:
        return v
    n = max(1, int(np.ceil(abs(t) / 0.02)))
    for _ in range(n):
        v = krylov._step(Hf, v, t / n, 30, 1e-13, 0)
    return v


def random_excitation(S: int, N: int, u: np.ndarray, rng: np.random.Generator) -> list:
    """Random normalised sector vector with every slot orthogonal to u."""
    Q = projector(u)
    phis = []
    for n in range(N + 1):
        T = rng.standard_normal((S,) * n) + 1j * rng.standard_normal((S,) * n)
        T = apply_on_axes(Q, symmetrize(T), range(n)) if n else np.asarray(T)
        phis.append(T)
    nrm = np.sqrt(sector_norm2(phis))
    return [p / nrm for p in phis]


def random_state(basis: OccupationBasis, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    return v / np.linalg.norm(v)
