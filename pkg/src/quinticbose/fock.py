"""Truncated bosonic Fock space over a few excited modes, second quantisation,
and the transformed many-body generator (quadratic part plus the cubic and
higher correction terms R_0..R_6) for a constant condensate.

Generator terms are described once, as slot patterns (see ``GENERATOR_TERMS``),
and realised here in a plane-wave basis and in :mod:`fewbody` on a lattice.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from .grid import TorusGrid, VOLUME
from .modes import ModeBasis
from .potential import ThreeBodyPotential, profile_transform

DENSE_LIMIT = 5000


class UnsupportedCondensateError(ValueError):
    pass


class NormDriftError(RuntimeError):
    pass


# -- basis ----------------------------------------------------------------------

class FockBasis:
    """Occupation vectors (n_1..n_M) with sum n_i <= P, ordered by sector."""

    def __init__(self, n_modes: int, P: int, modes: ModeBasis | None = None):
        if modes is not None and modes.size != n_modes:
            raise ValueError("mode basis size does not match n_modes")
        self.M = int(n_modes)
        self.P = int(P)
        self.modes = modes
        states = []
        for n in range(self.P + 1):
            # compositions of n into M parts, via stars and bars
            for bars in itertools.combinations(range(n + self.M - 1), self.M - 1):
                b = (-1,) + bars + (n + self.M - 1,)
                states.append([b[i + 1] - b[i] - 1 for i in range(self.M)])
        self.states = np.array(states, dtype=np.int64).reshape(-1, self.M)
        self.sectors = self.states.sum(1)
        self.base = self.P + 4
        self.codes = self.encode(self.states)
        self._order = np.argsort(self.codes)
        self._sorted = self.codes[self._order]

    @classmethod
    def for_modes(cls, modes: ModeBasis, P: int) -> "FockBasis":
        return cls(modes.size, P, modes)

    @property
    def dim(self) -> int:
        return len(self.states)

    @staticmethod
    def expected_dim(M: int, P: int) -> int:
        return comb(M + P, P)

    def encode(self, states: np.ndarray) -> np.ndarray:
        w = self.base ** np.arange(self.M, dtype=np.int64)
        return states @ w

    def lookup(self, states: np.ndarray) -> np.ndarray:
        """Index of each occupation vector, -1 when outside the basis."""
        c = self.encode(states)
        pos = np.searchsorted(self._sorted, c)
        pos = np.clip(pos, 0, len(self._sorted) - 1)
        found = self._sorted[pos] == c
        return np.where(found, self._order[pos], -1)

    def sector_mask(self, m: int) -> np.ndarray:
        return self.sectors <= m

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v


# -- operators ------------------------------------------------------------------

@dataclass
class FockOperator:
    """Sparse operator on a FockBasis.

    Transitions that would leave the cutoff are collected in ``leak`` as
    (overflow code, column, value) triplets so that their size can be audited.
    """

    basis: FockBasis
    matrix: sp.csr_matrix
    leak: tuple = field(default_factory=lambda: (np.zeros(0, np.int64), np.zeros(0, np.int64),
                                                 np.zeros(0, complex)))

    def __add__(self, other: "FockOperator") -> "FockOperator":
        self._same(other)
        leak = tuple(np.concatenate([a, b]) for a, b in zip(self.leak, other.leak))
        return FockOperator(self.basis, (self.matrix + other.matrix).tocsr(), leak)

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, s) -> "FockOperator":
        return FockOperator(self.basis, (self.matrix * s).tocsr(),
                            (self.leak[0], self.leak[1], self.leak[2] * s))

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, FockOperator):
            self._same(other)
            return FockOperator(self.basis, (self.matrix @ other.matrix).tocsr())
        return self.matrix @ other

    def _same(self, other):
        if other.basis is not self.basis:
            raise ValueError("operators live on different Fock bases")

    @property
    def H(self) -> "FockOperator":
        """Adjoint within the truncated space (no leak: the input side is complete)."""
        return FockOperator(self.basis, self.matrix.conj().T.tocsr())

    def hermitian_part(self) -> "FockOperator":
        return (self + self.H) * 0.5

    def dense(self) -> np.ndarray:
        if self.basis.dim > DENSE_LIMIT:
            raise MemoryError("dense materialisation is limited to dim <= 5000")
        return self.matrix.toarray()

    def leak_matrix(self) -> sp.csr_matrix:
        codes, cols, vals = self.leak
        if len(codes) == 0:
            return sp.csr_matrix((1, self.basis.dim), dtype=complex)
        uniq, rows = np.unique(codes, return_inverse=True)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(uniq), self.basis.dim))

    @property
    def leakage_norm(self) -> float:
        """Frobenius norm of the dropped block (upper bound for its operator norm)."""
        return float(sp.linalg.norm(self.leak_matrix())) if len(self.leak[0]) else 0.0

    def leakage(self, vec: np.ndarray) -> float:
        """|| dropped part applied to vec ||."""
        if len(self.leak[0]) == 0:
            return 0.0
        return float(np.linalg.norm(self.leak_matrix() @ vec))

    def compress(self, m: int) -> "FockOperator":
        """1^{<=m} A 1^{<=m}, still on the full basis."""
        mask = self.basis.sector_mask(m).astype(float)
        D = sp.diags(mask)
        return FockOperator(self.basis, (D @ self.matrix @ D).tocsr())

    def block(self, m: int) -> np.ndarray:
        """Dense matrix of the compression onto sectors <= m."""
        idx = np.flatnonzero(self.basis.sector_mask(m))
        if len(idx) > DENSE_LIMIT:
            raise MemoryError("dense block too large")
        return self.matrix[idx][:, idx].toarray()

    def hermiticity_defect(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0


def monomials(basis: FockBasis, creators: np.ndarray, annihilators: np.ndarray,
              coef: np.ndarray, input_factor: Callable[[np.ndarray], np.ndarray] | None = None,
              chunk_elems: int = 2_000_000) -> FockOperator:
    """sum_t coef_t a*_{c_t1}..a*_{c_ti} a_{d_t1}..a_{d_tj} F(n_in).

    creators (T, i) and annihilators (T, j) are mode indices; ``input_factor``
    maps the input sector number to a multiplicative factor.
    """
    coef = np.atleast_1d(np.asarray(coef, dtype=complex))
    creators = _index_table(creators, len(coef))
    annihilators = _index_table(annihilators, len(coef))
    D, M = basis.dim, basis.M
    fac = np.ones(D) if input_factor is None else np.asarray(input_factor(basis.sectors), float)
    live = fac != 0
    cols_all = np.flatnonzero(live)
    rows, cols, vals = [], [], []
    lcodes, lcols, lvals = [], [], []
    T = len(coef)
    step = max(1, chunk_elems // max(len(cols_all), 1))
    for t0 in range(0, T, step):
        sl = slice(t0, min(T, t0 + step))
        occ = np.repeat(basis.states[cols_all][None], sl.stop - sl.start, axis=0)
        amp = np.ones(occ.shape[:2])
        for ops, sign in ((annihilators[sl], -1), (creators[sl], +1)):
            for k in range(ops.shape[1]):
                idx = np.broadcast_to(ops[:, k][:, None, None], occ.shape[:2] + (1,))
                n = np.take_along_axis(occ, idx, axis=2)[..., 0]
                if sign < 0:
                    amp *= np.sqrt(np.maximum(n, 0))
                    n = np.maximum(n - 1, 0)
                else:
                    amp *= np.sqrt(n + 1)
                    n = n + 1
                np.put_along_axis(occ, idx, n[..., None], axis=2)
        tt, ss = np.nonzero(amp)
        if len(tt) == 0:
            continue
        out = occ[tt, ss]
        val = coef[sl][tt] * amp[tt, ss] * fac[cols_all][ss]
        c = cols_all[ss]
        inside = out.sum(1) <= basis.P
        r = basis.lookup(out[inside])
        rows.append(r)
        cols.append(c[inside])
        vals.append(val[inside])
        if (~inside).any():
            lcodes.append(basis.encode(out[~inside]))
            lcols.append(c[~inside])
            lvals.append(val[~inside])
    if rows:
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(D, D))
    else:
        mat = sp.csr_matrix((D, D), dtype=complex)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    if lcodes:
        leak = (np.concatenate(lcodes), np.concatenate(lcols), np.concatenate(lvals))
    else:
        leak = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, complex))
    return FockOperator(basis, mat, leak)


def _index_table(a, T):
    a = np.asarray(a, dtype=np.int64)
    if a.size == 0:
        return np.zeros((T, 0), dtype=np.int64)
    return a.reshape(T, -1)


def ladder(basis: FockBasis, mode: int, kind: str) -> FockOperator:
    if not 0 <= mode < basis.M:
        raise IndexError("mode index out of range")
    if kind == "create":
        return monomials(basis, [[mode]], np.zeros((1, 0)), [1.0])
    if kind == "annihilate":
        return monomials(basis, np.zeros((1, 0)), [[mode]], [1.0])
    raise ValueError("kind must be 'create' or 'annihilate'")


def dGamma(basis: FockBasis, A: np.ndarray) -> FockOperator:
    """sum_pq A_pq a*_p a_q."""
    A = np.asarray(A)
    p, q = np.nonzero(A)
    if len(p) == 0:
        return zero_operator(basis)
    return monomials(basis, p[:, None], q[:, None], A[p, q])


def number_operator(basis: FockBasis) -> FockOperator:
    return FockOperator(basis, sp.diags(basis.sectors.astype(complex)).tocsr())


def diagonal_operator(basis: FockBasis, values: np.ndarray) -> FockOperator:
    return FockOperator(basis, sp.diags(np.asarray(values, dtype=complex)).tocsr())


def zero_operator(basis: FockBasis) -> FockOperator:
    return FockOperator(basis, sp.csr_matrix((basis.dim, basis.dim), dtype=complex))


def pair_creation(basis: FockBasis, K: np.ndarray,
                  input_factor=None) -> FockOperator:
    """sum_pq K_pq a*_p a*_q (times an optional input-sector factor)."""
    K = np.asarray(K)
    p, q = np.nonzero(K)
    if len(p) == 0:
        return zero_operator(basis)
    return monomials(basis, np.stack([p, q], 1), np.zeros((len(p), 0)), K[p, q], input_factor)


# -- generator term table -------------------------------------------------------
#
# A slot pattern lists, for the three particle slots (x, y, z) of V_N(x-y, x-z),
# whether the created (left) and annihilated (right) one-body function is an
# excited mode ('e') or the condensate ('0').  A condensate on the left gives a
# factor conj(u), on the right a factor u.  A term is
#
#     prefactor(N) * sum  <f_x f_y f_z, V_N g_x g_y g_z>  a*(..) a(..)  G(N - n_in),
#
# with n_in the excitation number of the input.  The table below is obtained by
# expanding the normal-ordered interaction, applying the condensate/excitation
# substitution, and removing the parts absorbed in the quadratic generator.

def _sq(x):
    return np.sqrt(np.maximum(x, 0.0))


@dataclass(frozen=True)
class SlotTerm:
    slots: tuple                    # ((create_excited, annihilate_excited),) * 3
    prefactor: Callable             # N -> float
    sector_factor: Callable         # (c, N) -> array, c = N - n_in

    @property
    def n_create(self) -> int:
        return sum(s[0] for s in self.slots)

    @property
    def n_annihilate(self) -> int:
        return sum(s[1] for s in self.slots)


def _p(*slots):
    return tuple((a == "e", b == "e") for a, b in slots)


GENERATOR_TERMS = {
    0: [SlotTerm(_p("ee", "00", "00"), lambda N: 0.5, lambda c, N: c * (c - 1) / N**2 - 1),
        SlotTerm(_p("e0", "0e", "00"), lambda N: 1.0, lambda c, N: c * (c - 1) / N**2 - 1)],
    1: [SlotTerm(_p("e0", "00", "00"), lambda N: 1.0,
                 lambda c, N: _sq(c) * ((c - 1) * (c - 2) / N**2 - 1))],
    2: [SlotTerm(_p("e0", "e0", "00"), lambda N: 1.0,
                 lambda c, N: _sq(c) * _sq(c - 1) * (c - 2) / N**2 - 1)],
    3: [SlotTerm(_p("e0", "e0", "e0"), lambda N: 1.0 / (3 * N**2),
                 lambda c, N: _sq(c) * _sq(c - 1) * _sq(c - 2)),
        SlotTerm(_p("ee", "e0", "00"), lambda N: 2.0 / N**2,
                 lambda c, N: _sq(c) * (c - 1)),
        SlotTerm(_p("e0", "e0", "0e"), lambda N: 1.0 / N**2,
                 lambda c, N: _sq(c) * (c - 1))],
    4: [SlotTerm(_p("ee", "e0", "e0"), lambda N: 1.0 / N**2, lambda c, N: _sq(c) * _sq(c - 1)),
        SlotTerm(_p("ee", "ee", "00"), lambda N: 0.5 / N**2, lambda c, N: np.maximum(c, 0)),
        SlotTerm(_p("ee", "e0", "0e"), lambda N: 1.0 / N**2, lambda c, N: np.maximum(c, 0))],
    5: [SlotTerm(_p("ee", "ee", "e0"), lambda N: 1.0 / N**2, lambda c, N: _sq(c))],
    6: [SlotTerm(_p("ee", "ee", "ee"), lambda N: 1.0 / (6 * N**2), lambda c, N: np.ones_like(c))],
}


def r0_scalar(n, N, c0):
    """Scalar part of R_0 as a function of the excitation number n."""
    n = np.asarray(n, dtype=float)
    return c0 / 6.0 * ((3 * n * n + 6 * n + 2) / N - n * (n + 1) * (n + 2) / N**2)


def chi_phase(N, c0):
    """Phase rate (2N + 3)/6 <u^3, V_N u^3>."""
    return (2 * N + 3) / 6.0 * c0


# -- plane-wave coefficients for the constant condensate ----------------------------

class ConstantCondensateCoupling:
    """Six-point coefficients <e_p e_q e_r, V_N e_s e_t e_u> for plane waves.

    Equals (2 pi)^{-6} delta_{p+q+r = s+t+u (mod n)} V_hat(q - t, r - u) with
    V_hat(b, c) = (w(b) w(c) + w(b+c)(w(b) + w(c))) / 3 from the grid transform of w_N.
    """

    def __init__(self, V: ThreeBodyPotential, grid: TorusGrid):
        V.require_pair_product()
        self.V, self.grid = V, grid
        self.what = profile_transform(V, grid).real

    def w_hat(self, k):
        k = np.asarray(k) % self.grid.n
        return self.what[k[..., 0], k[..., 1], k[..., 2]]

    def v_hat(self, b, c):
        wb, wc, wbc = self.w_hat(b), self.w_hat(c), self.w_hat(np.asarray(b) + np.asarray(c))
        return (wb * wc + wbc * (wb + wc)) / 3.0

    def six_point(self, p, q, r, s, t, u):
        p, q, r, s, t, u = (np.asarray(a) for a in (p, q, r, s, t, u))
        cons = np.all((p + q + r - s - t - u) % self.grid.n == 0, axis=-1)
        return np.where(cons, self.v_hat(q - t, r - u), 0.0) / VOLUME**2

    def c0(self) -> float:
        """<u^3, V_N u^3> for u = (2 pi)^{-3/2}."""
        z = np.zeros(3, dtype=int)
        return float(self.six_point(z, z, z, z, z, z) * 1.0)


def direct_six_point(V: ThreeBodyPotential, grid: TorusGrid, p, q, r, s, t, u) -> complex:
    """Oracle for one six-point plane-wave coefficient by explicit grid sums.

    Uses the dense shift matrix w_N(x - y), no FFTs; intended for 8^3 grids.
    """
    from .potential import partial_integral_W2

    if grid.n > 8:
        raise MemoryError("direct six-point sums are limited to 8^3")
    Wm = partial_integral_W2(V, np.zeros(grid.shape), grid).shift_matrix()
    h3 = grid.cell_volume
    e = lambda k: grid.plane_wave(k).ravel()
    f = np.conj(e(p)) * e(s)
    g = np.conj(e(q)) * e(t)
    k = np.conj(e(r)) * e(u)
    t1 = np.sum(f * (Wm @ g) * (Wm @ k))
    t2 = np.sum(g * (Wm.T @ f) * (Wm.T @ k))
    t3 = np.sum(k * (Wm.T @ f) * (Wm @ g))
    return complex((t1 + t2 + t3) / 3.0 * h3**3)


def slot_term_operator(term: SlotTerm, basis: FockBasis, coupling: ConstantCondensateCoupling,
                       N: float, phase: complex = 1.0) -> FockOperator:
    """Plane-wave realisation of one slot-pattern term for u = phase (2 pi)^{-3/2}."""
    ks = basis.modes.wavevectors
    M = basis.M
    cs = [i for i in range(3) if term.slots[i][0]]
    as_ = [i for i in range(3) if term.slots[i][1]]
    free = len(cs) + len(as_)
    tuples = list(itertools.product(range(M), repeat=free))
    idx = np.array(tuples, dtype=np.int64).reshape(len(tuples), free)
    mom = np.zeros((len(idx), 6, 3), dtype=int)
    for j, slot in enumerate(cs):
        mom[:, slot] = ks[idx[:, j]]
    for j, slot in enumerate(as_):
        mom[:, 3 + slot] = ks[idx[:, len(cs) + j]]
    coef = coupling.six_point(*(mom[:, i] for i in range(6)))
    # condensate factors: conj(u) per created condensate slot, u per annihilated one
    coef = coef * (np.conj(phase) ** (3 - len(cs)) * phase ** (3 - len(as_)))
    keep = np.abs(coef) > 1e-300
    cvals = coef[keep] * term.prefactor(N)
    crea = idx[keep][:, :len(cs)]
    anni = idx[keep][:, len(cs):]
    if len(cvals) == 0:
        return zero_operator(basis)
    return monomials(basis, crea, anni, cvals, lambda n: term.sector_factor(N - n.astype(float), N))


# -- generator bundle -----------------------------------------------------------------

@dataclass
class GeneratorBundle:
    basis: FockBasis
    N: float
    chi: float
    c0: float
    bogoliubov: FockOperator
    R: list
    number_op: FockOperator
    kinetic_op: FockOperator
    condensate_energy: float = 0.0     # F, the rotating-frame frequency of u(t)
    beta: float | None = None

    def symmetrised(self, j: int) -> FockOperator:
        """R_j + R_j^*."""
        return self.R[j] + self.R[j].H

    def total(self) -> FockOperator:
        """Full transformed generator B + (1/2) sum_j (R_j + R_j^*)."""
        out = self.bogoliubov
        for j in range(7):
            out = out + self.symmetrised(j) * 0.5
        return out

    def rotating(self, op: FockOperator) -> FockOperator:
        """Generator in the frame co-rotating with the condensate phase."""
        return op - self.number_op * self.condensate_energy


def assemble_generator(u: np.ndarray, V: ThreeBodyPotential, basis: FockBasis, N: float,
                       grid: TorusGrid) -> GeneratorBundle:
    """Quadratic generator, R_0..R_6 and chi for a constant condensate.

    The bundle describes the generator at the time where u has the given phase;
    at other times it differs by conjugation with exp(-i F N t).
    """
    u = grid.check(u)
    if not np.allclose(u, u.flat[0], atol=1e-12, rtol=0):
        raise UnsupportedCondensateError("Fock-space assembly supports only the constant condensate")
    if basis.modes is None or not basis.modes.condensate_constant:
        raise ValueError("Fock basis needs a plane-wave mode basis")
    if abs(abs(u.flat[0]) - VOLUME**-0.5) > 1e-10:
        raise ValueError("condensate must be normalised")
    if basis.dim > 200_000:
        raise MemoryError("Fock basis too large for assembly")
    phase = u.flat[0] / abs(u.flat[0])
    ks = basis.modes.wavevectors
    coupling = ConstantCondensateCoupling(V, grid)
    c0 = coupling.c0()
    rho = VOLUME**-1
    F = 0.5 * c0                # F_u = (1/2) int int |u|^2 V |u|^2 is constant here
    K1 = np.diag(rho**2 * _w2_hat(coupling, ks))
    h = np.diag(basis.modes.k2 + F)
    neg = basis.modes.negation()
    K2 = np.zeros((len(ks), len(ks)), dtype=complex)
    K2[np.arange(len(ks)), neg] = rho**2 * _w2_hat(coupling, ks) * phase**2
    bog = dGamma(basis, h + K1)
    pair = pair_creation(basis, K2)
    bog = bog + (pair + pair.H) * 0.5
    R = []
    for j in range(7):
        op = zero_operator(basis)
        for term in GENERATOR_TERMS[j]:
            op = op + slot_term_operator(term, basis, coupling, N, phase)
        if j == 0:
            op = op + diagonal_operator(basis, r0_scalar(basis.sectors, N, c0))
        R.append(op)
    return GeneratorBundle(
        basis=basis, N=N, chi=chi_phase(N, c0), c0=c0, bogoliubov=bog, R=R,
        number_op=number_operator(basis),
        kinetic_op=dGamma(basis, np.diag(1.0 + basis.modes.k2)),
        condensate_energy=F, beta=V.beta)


def _w2_hat(coupling: ConstantCondensateCoupling, ks):
    """Grid transform of W(x) = int V_N(x, s) ds at the wavevectors ks."""
    z = np.zeros_like(ks)
    return coupling.v_hat(ks, z)


# -- bounds and dynamics ----------------------------------------------------------------

def eta_threshold(m: int, N: float, beta: float, C: float = 1.0) -> float:
    return C * max(np.sqrt(m * N ** (2 * beta - 1)), np.sqrt(m**3 * N ** (5 * beta - 3)),
                   m * m * N ** (4 * beta - 2))


@dataclass
class BoundReport:
    j: int
    sign: int
    eta: float
    m: int
    N: float
    beta: float
    min_eig: float          # of 1^{<=m}[eta dGamma(1-Delta) + c_ref m N^{4b-1}/eta -+ (R_j+R_j^*)]1^{<=m}
    unshifted_min: float    # same without the constant shift
    minimal_c: float
    eta_ok: bool

    def row(self):
        return (self.j, "+" if self.sign > 0 else "-", self.eta, self.m, self.N, self.beta,
                self.min_eig, self.minimal_c)


def certify_error_bounds(bundle: GeneratorBundle, m: int, eta: float | None = None,
                         c_ref: float = 1.0, eta_C: float = 1.0) -> list[BoundReport]:
    """Eigenvalue certification of +-(R_j + R_j^*) <= eta dGamma(1-Delta) + eta^{-1} c m N^{4b-1}.

    The minimal c is the closed-form smallest constant making the compressed
    operator nonnegative; ``min_eig`` is reported at the reference shift ``c_ref``.
    """
    basis = bundle.basis
    if m > basis.P - 3:
        raise ValueError("need m <= P - 3 so the compression stays inside the truncation")
    beta = bundle.beta
    N = bundle.N
    thr = eta_threshold(m, N, beta, eta_C)
    if eta is None:
        eta = thr
    scale = m * N ** (4 * beta - 1) / eta
    kin = bundle.kinetic_op.block(m)
    out = []
    for j in range(7):
        S = bundle.symmetrised(j).block(m)
        for sign in (+1, -1):
            A = eta * kin - sign * S
            lam = float(np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0])
            cmin = max(0.0, -lam) / scale
            out.append(BoundReport(j, sign, eta, m, N, beta, lam + c_ref * scale, lam, cmin,
                                   eta >= thr * (1 - 1e-12)))
    return out


@dataclass
class TruncatedTrajectory:
    times: np.ndarray
    states: list
    number: np.ndarray
    kinetic: np.ndarray
    histogram: np.ndarray
    leakage: float
    norm_drift: float


def evolve_truncated(generator: FockOperator, Phi0: np.ndarray, M: int, dt: float, t_final: float,
                     kinetic_op: FockOperator | None = None) -> TruncatedTrajectory:
    """Propagate i dPhi/dt = 1^{<=M} G 1^{<=M} Phi with a time-independent G.

    Uses scipy's truncated-Taylor exponential action per step.  ``leakage`` is the
    Duhamel bound int ||(dropped part of G) Phi|| dt for the cutoff P.
    """
    basis = generator.basis
    if M > basis.P:
        raise ValueError("sector cutoff M must not exceed P")
    Phi0 = np.asarray(Phi0, dtype=complex)
    mask = basis.sector_mask(M)
    if np.linalg.norm(Phi0[~mask]) > 0:
        raise ValueError("initial state has weight above the sector cutoff")
    G = generator.compress(M)
    A = (-1j * G.matrix).tocsc()
    Lm = generator.leak_matrix() if len(generator.leak[0]) else None
    Nop = number_operator(basis).matrix
    Kop = kinetic_op.matrix if kinetic_op is not None else None
    n = int(round(t_final / dt))
    v = Phi0.copy()
    norm0 = np.linalg.norm(v)
    states, num, kin, hist, leaks = [v], [], [], [], []

    def record(v):
        num.append(np.vdot(v, Nop @ v).real)
        kin.append(np.vdot(v, Kop @ v).real if Kop is not None else np.nan)
        hist.append(np.bincount(basis.sectors, weights=np.abs(v) ** 2, minlength=basis.P + 1))
        leaks.append(np.linalg.norm(Lm @ (v * mask)) if Lm is not None and M == basis.P else 0.0)

    record(v)
    drift = 0.0
    for i in range(n):
        v = spla.expm_multiply(A * dt, v)
        drift = max(drift, abs(np.linalg.norm(v) - norm0))
        states.append(v)
        record(v)
    if drift > 1e-8 * max(1.0, t_final):
        raise NormDriftError(f"norm drift {drift:.3g}")
    leaks = np.array(leaks)
    leak_int = float(dt * (leaks.sum() - 0.5 * (leaks[0] + leaks[-1]))) if n else 0.0
    return TruncatedTrajectory(np.arange(n + 1) * dt, states, np.array(num), np.array(kin),
                               np.array(hist), leak_int, drift)
