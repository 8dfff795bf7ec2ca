"""Three-body potentials built from a radial pair profile, their N-rescalings and
the partial integrals that feed the Hartree nonlinearity and pair kernels.

The working family is the symmetrised pair-product sum

    V(x, y) = (w(x) w(y) + w(x) w(x - y) + w(y) w(x - y)) / 3,

for which every double convolution collapses to a handful of FFT convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.sparse import linalg as spla

from .grid import TorusGrid, VOLUME

PAIR_PRODUCT = "pair_product_sum"
TRIPLE_PRODUCT = "triple_product"
FORMS = (PAIR_PRODUCT, TRIPLE_PRODUCT)


class UnsupportedFormError(ValueError):
    pass


class QuadratureResolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PairProfile:
    """Quartic bump w(x) = A (1 - |x|^2/R^2)^2 on |x| <= R."""

    amplitude: float
    radius: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        if not 0 < self.radius < np.pi:
            raise ValueError("support radius must lie in (0, pi)")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        s = np.clip(1.0 - (r / self.radius) ** 2, 0.0, None)
        return self.amplitude * s * s

    def __call__(self, x):
        """Evaluate on points of shape (..., 3)."""
        x = np.asarray(x, dtype=float)
        return self.radial(np.sqrt(np.sum(x * x, axis=-1)))

    def integral(self) -> float:
        """Closed form of int_{R^3} w = 32 pi A R^3 / 105."""
        return 32.0 * np.pi * self.amplitude * self.radius**3 / 105.0

    def fourier(self, k, order: int = 64):
        """Continuum transform int w(x) e^{-ik.x} dx as a function of |k|."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        r, wts = np.polynomial.legendre.leggauss(order)
        r = 0.5 * self.radius * (r + 1.0)
        wts = 0.5 * self.radius * wts
        kr = np.outer(k, r)
        # sin(kr)/(kr) with the k = 0 limit handled by np.sinc
        return 4.0 * np.pi * (np.sinc(kr / np.pi) * (r * r * self.radial(r) * wts)).sum(axis=1)

    def with_amplitude_for_integral(self, target: float) -> "PairProfile":
        return replace(self, amplitude=target * 105.0 / (32.0 * np.pi * self.radius**3))


@dataclass(frozen=True)
class ThreeBodyPotential:
    profile: PairProfile
    beta: float
    N: int = 1
    form: str = PAIR_PRODUCT

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown potential form {self.form!r}")
        if not 0 < self.beta < 1.0 / 6.0:
            raise ValueError("beta must lie in (0, 1/6)")
        if self.N < 1:
            raise ValueError("N must be a positive integer")

    @property
    def scale(self) -> float:
        return float(self.N) ** self.beta

    def at(self, N: int) -> "ThreeBodyPotential":
        return replace(self, N=int(N))

    @property
    def is_zero(self) -> bool:
        return self.profile.amplitude == 0

    def w_N(self, x):
        """Rescaled profile N^{3b} w(N^b x) on points (..., 3)."""
        s = self.scale
        return s**3 * self.profile(np.asarray(x, dtype=float) * s)

    def unscaled(self, x, y):
        """V(x, y) on points of shape (..., 3)."""
        w = self.profile
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        wx, wy, wxy = w(x), w(y), w(x - y)
        if self.form == PAIR_PRODUCT:
            # grouped so that swapping x and y is exact in floating point
            return (wx * wy + wxy * (wx + wy)) / 3.0
        return wx * wy * wxy

    def __call__(self, x, y):
        """V_N(x, y) = N^{6b} V(N^b x, N^b y)."""
        s = self.scale
        return s**6 * self.unscaled(np.asarray(x) * s, np.asarray(y) * s)

    def require_pair_product(self):
        if self.form != PAIR_PRODUCT:
            raise UnsupportedFormError(
                "triple_product form is only available through direct summation")


# -- continuum integrals ------------------------------------------------------

def _triple_product_integral(profile: PairProfile, order: int) -> float:
    """int int w(x) w(y) w(x-y) = (2 pi)^{-3} int w_hat(k)^3 dk, radially."""
    kmax = 150.0 / profile.radius
    kk, kw = np.polynomial.legendre.leggauss(16)
    # split [0, kmax] into panels so the oscillatory tail is resolved
    panels = np.linspace(0.0, kmax, order + 1)
    total = 0.0
    for a, b in zip(panels[:-1], panels[1:]):
        k = 0.5 * (b - a) * (kk + 1.0) + a
        total += np.sum(0.5 * (b - a) * kw * k * k * profile.fourier(k, order=2 * order) ** 3)
    return 4.0 * np.pi * total / VOLUME


def _radial_integral(profile: PairProfile, order: int) -> float:
    r, wts = np.polynomial.legendre.leggauss(order)
    r = 0.5 * profile.radius * (r + 1.0)
    return float(4.0 * np.pi * np.sum(0.5 * profile.radius * wts * r * r * profile.radial(r)))


def potential_integral(V: ThreeBodyPotential, rtol: float = 1e-6) -> float:
    """int int V dx dy over R^6, checked at two quadrature orders."""
    p = V.profile
    if p.amplitude == 0:
        return 0.0
    if V.form == PAIR_PRODUCT:
        lo, hi = _radial_integral(p, 8), _radial_integral(p, 16)
        lo, hi = lo * lo, hi * hi
    else:
        lo, hi = _triple_product_integral(p, 32), _triple_product_integral(p, 64)
    if abs(lo - hi) > rtol * abs(hi):
        raise QuadratureResolutionError(f"quadrature orders disagree: {lo} vs {hi}")
    return hi


def coupling_b0(V: ThreeBodyPotential, grid: TorusGrid | None = None) -> float:
    """b0 = (1/2) int int V.

    With ``grid`` the value is the grid-consistent one, (1/2)(h^3 sum w_N)^2, which
    is what the discrete Hartree nonlinearity reproduces exactly on constant data.
    """
    if grid is None:
        return 0.5 * potential_integral(V)
    V.require_pair_product()
    mass = float(np.sum(sampled_profile(V, grid)) * grid.cell_volume)
    return 0.5 * mass * mass


def monte_carlo_integral(V: ThreeBodyPotential, n_samples: int, rng: np.random.Generator,
                         replicas: int = 8) -> tuple[float, float]:
    """Independent estimate of int int V (unscaled) by scrambled-Sobol sampling.

    x and y are drawn in the ball of radius R (triple product) or 2R (pair
    products, where one factor is a difference).  Returns (estimate, standard
    error over the independent scramblings).
    """
    from scipy.stats import qmc

    R = V.profile.radius * (1.0 if V.form == TRIPLE_PRODUCT else 2.0)
    vol = (4.0 / 3.0 * np.pi * R**3) ** 2
    m = max(int(n_samples // replicas), 1)
    estimates = []
    for _ in range(replicas):
        pts = qmc.Sobol(d=6, scramble=True, seed=rng).random(m)
        x, y = _to_ball(pts[:, :3], R), _to_ball(pts[:, 3:], R)
        estimates.append(vol * V.unscaled(x, y).mean())
    estimates = np.array(estimates)
    return float(estimates.mean()), float(estimates.std(ddof=1) / np.sqrt(replicas))


def _to_ball(p, R):
    r = R * np.cbrt(p[:, 0])
    ct = 2.0 * p[:, 1] - 1.0
    st = np.sqrt(1.0 - ct * ct)
    ph = 2.0 * np.pi * p[:, 2]
    return np.stack([r * st * np.cos(ph), r * st * np.sin(ph), r * ct], axis=1)


# -- grid realisations --------------------------------------------------------

@lru_cache(maxsize=64)
def _sampled(profile: PairProfile, beta: float, N: int, n: int):
    grid = TorusGrid(n)
    s = float(N) ** beta
    w = s**3 * profile.radial(grid.radius * s)
    w.setflags(write=False)
    what = sfft.fftn(w) * grid.cell_volume
    what.setflags(write=False)
    return w, what


def sampled_profile(V: ThreeBodyPotential, grid: TorusGrid) -> np.ndarray:
    """w_N on the grid at minimal-image distance from the origin (read-only)."""
    return _sampled(V.profile, V.beta, V.N, grid.n)[0]


def profile_transform(V: ThreeBodyPotential, grid: TorusGrid) -> np.ndarray:
    """Grid transform w_hat(k) = h^3 sum_x w_N(x) e^{-ik.x}, FFT order."""
    return _sampled(V.profile, V.beta, V.N, grid.n)[1]


def _conv_hat(what, f):
    """w_N * f for real w_N given its quadrature transform."""
    return sfft.ifftn(what * sfft.fftn(f))


def hartree_nonlinearity(u: np.ndarray, V: ThreeBodyPotential, grid: TorusGrid) -> np.ndarray:
    """F(x) = (1/2) int int |u(y)|^2 V_N(x-y, x-z) |u(z)|^2 dy dz (real array)."""
    V.require_pair_product()
    u = grid.check(u)
    if V.is_zero:
        return np.zeros(grid.shape)
    what = profile_transform(V, grid)
    f = (u.real**2 + u.imag**2)
    g = _conv_hat(what, f).real
    F = (g * g + 2.0 * _conv_hat(what, f * g).real) / 6.0
    return F


def two_point_profile(V: ThreeBodyPotential, grid: TorusGrid) -> np.ndarray:
    """W(x) = int V_N(x, s) ds = (2 (int w_N) w_N + w_N * w_N) / 3 on the grid."""
    V.require_pair_product()
    w = sampled_profile(V, grid)
    what = profile_transform(V, grid)
    mass = what[0, 0, 0].real
    return (2.0 * mass * w + sfft.ifftn(what * what).real / grid.cell_volume) / 3.0


def two_point_transform(V: ThreeBodyPotential, grid: TorusGrid) -> np.ndarray:
    """Quadrature transform of W, i.e. (2 w_hat(0) w_hat(k) + w_hat(k)^2) / 3."""
    what = profile_transform(V, grid)
    return ((2.0 * what[0, 0, 0] * what + what * what) / 3.0).real


@dataclass
class TwoPointFunction:
    """m(x, y) = int V_N(x-y, x-z) f(z) dz in decomposed form.

    m(x, y) = (w_N(x-y) g(x) + w_N(x-y) g(y) + r(x, y)) / 3 with g = w_N * f and
    r(x, y) = int w_N(x-z) w_N(y-z) f(z) dz.
    """

    grid: TorusGrid
    w: np.ndarray
    what: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def shift_matrix(self) -> np.ndarray:
        """Dense n^3 x n^3 matrix W(x, y) = w_N(x - y)."""
        n = self.grid.n
        idx = np.indices(self.grid.shape).reshape(3, -1)
        d = (idx[:, :, None] - idx[:, None, :]) % n
        return self.w[d[0], d[1], d[2]]

    def r_dense(self) -> np.ndarray:
        self._guard()
        Wm = self.shift_matrix()
        return (Wm * (self.f.ravel() * self.grid.cell_volume)) @ Wm.T

    def dense(self) -> np.ndarray:
        self._guard()
        Wm = self.shift_matrix()
        gx = self.g.ravel()
        return (Wm * gx[:, None] + Wm * gx[None, :] + self.r_dense()) / 3.0

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """x -> int m(x, y) phi(y) dy, matrix-free."""
        grid = self.grid
        phi = grid.check(phi)
        t1 = self.g * self._conv(phi)
        t2 = self._conv(self.g * phi)
        t3 = self._conv(self.f * self._conv(phi))
        return (t1 + t2 + t3) / 3.0

    def _conv(self, h):
        return _conv_hat(self.what, h)

    def _guard(self):
        if self.grid.n > 16:
            raise MemoryError("dense two-point materialisation is limited to 16^3 grids")


def partial_integral_W2(V: ThreeBodyPotential, f: np.ndarray, grid: TorusGrid) -> TwoPointFunction:
    V.require_pair_product()
    f = np.asarray(grid.check(f)).real
    what = profile_transform(V, grid)
    return TwoPointFunction(grid, sampled_profile(V, grid), what, f, _conv_hat(what, f).real)


# -- kinetic-bound diagnostic -------------------------------------------------

def sobolev_ratio_diagnostic(V: ThreeBodyPotential, grid: TorusGrid, tol: float = 1e-8) -> float:
    """sup <v, W v> / <v, -Delta v> over mean-zero v, divided by ||W||_{3/2}.

    Solved as the top eigenvalue of (-Delta)^{-1/2} W (-Delta)^{-1/2} on the
    mean-zero subspace with FFT matvecs.
    """
    if V.is_zero:
        return 0.0
    W = two_point_profile(V, grid)
    norm32 = (np.sum(np.abs(W) ** 1.5) * grid.cell_volume) ** (2.0 / 3.0)
    k2 = grid.k2
    inv_sqrt = np.zeros_like(k2)
    inv_sqrt[k2 > 0] = k2[k2 > 0] ** -0.5

    def mv(v):
        c = sfft.fftn(v.reshape(grid.shape)) * inv_sqrt
        x = sfft.ifftn(c) * W
        return (sfft.ifftn(sfft.fftn(x) * inv_sqrt)).real.ravel()

    op = spla.LinearOperator((grid.size, grid.size), matvec=mv, dtype=float)
    v0 = np.cos(grid.coords[0]).ravel()
    lam = spla.eigsh(op, k=1, which="LA", tol=tol, v0=v0, return_eigenvectors=False)[0]
    return float(lam / norm32)


def direct_hartree_nonlinearity(u: np.ndarray, V: ThreeBodyPotential, grid: TorusGrid) -> np.ndarray:
    """Oracle: F by explicit double sums over (y, z) with V_N sampled pointwise.

    Costs O(n^9); intended for grids up to 8^3.  Works for either potential form.
    """
    if grid.n > 8:
        raise MemoryError("direct summation is limited to 8^3 grids")
    pts = np.stack([c.ravel() for c in grid.coords], axis=1)
    f = np.abs(grid.check(u).ravel()) ** 2
    h3 = grid.cell_volume
    out = np.empty(len(pts))

    def wrap(d):
        return (d + np.pi) % (2 * np.pi) - np.pi

    wd = V.w_N(wrap(pts[None, :, :] - pts[:, None, :]))     # w_N(z - y)
    for i, x in enumerate(pts):
        wa = V.w_N(wrap(x - pts))                            # w_N(x - y)
        if V.form == TRIPLE_PRODUCT:
            Vyz = wa[:, None] * wa[None, :] * wd
        else:
            Vyz = (wa[:, None] * wa[None, :] + wa[:, None] * wd + wa[None, :] * wd) / 3.0
        out[i] = 0.5 * h3 * h3 * f @ Vyz @ f
    return out.reshape(grid.shape)
