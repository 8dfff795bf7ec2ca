"""Uniform periodic grid on the torus T^3 = (R / 2 pi Z)^3 with spectral calculus.

Fields are plain complex numpy arrays of shape ``(n, n, n)``; C-order ravel gives
lexicographic site order.  Spectral coefficients follow the convention

    f(x) = sum_k c_k exp(i k.x),

so ``c = fftn(f) / n**3`` and a normalised constant ``(2 pi)^{-3/2}`` has
``c_0 = (2 pi)^{-3/2}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
VOLUME = TWO_PI**3


class GridMismatchError(ValueError):
    """Raised when an array does not live on the grid it is used with."""


@dataclass(frozen=True)
class TorusGrid:
    """Cubic grid with ``n`` points per dimension on the 2 pi-periodic torus."""

    n: int

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_dim must be even and >= 8, got {self.n}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def size(self) -> int:
        return self.n**3

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def volume(self) -> float:
        return VOLUME

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def displacements(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Minimal-image displacement of every site from the origin."""
        d = self.axis.copy()
        d[d >= np.pi] -= TWO_PI
        return tuple(np.meshgrid(d, d, d, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        dx, dy, dz = self.displacements
        return np.sqrt(dx * dx + dy * dy + dz * dz)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers in FFT order (symmetric range, -n/2 included)."""
        return np.rint(sfft.fftfreq(self.n, d=1.0 / self.n)).astype(int)

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.wavenumbers
        return tuple(np.meshgrid(k, k, k, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.wavevectors
        return (kx * kx + ky * ky + kz * kz).astype(float)

    def index_of(self, k) -> tuple[int, int, int]:
        """Array index of the integer wavevector ``k`` (taken modulo n)."""
        return tuple(int(c) % self.n for c in k)

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        if f.shape == self.shape:
            return f
        if f.size == self.size:
            return f.reshape(self.shape)
        raise GridMismatchError(f"array of size {f.size} does not fit a {self.n}^3 grid")

    # -- transforms ---------------------------------------------------------

    def forward(self, f: np.ndarray) -> np.ndarray:
        """Spectral coefficients c_k with f(x) = sum_k c_k e^{ik.x}."""
        return sfft.fftn(self.check(f)) / self.size

    def inverse(self, c: np.ndarray) -> np.ndarray:
        return sfft.ifftn(self.check(c)) * self.size

    def plane_wave(self, k, normalized: bool = True) -> np.ndarray:
        x, y, z = self.coords
        f = np.exp(1j * (k[0] * x + k[1] * y + k[2] * z))
        return f / np.sqrt(VOLUME) if normalized else f

    def constant(self) -> np.ndarray:
        """Unit-L^2 constant field (2 pi)^{-3/2}."""
        return np.full(self.shape, VOLUME**-0.5, dtype=complex)

    # -- quadrature ---------------------------------------------------------

    def integrate(self, f: np.ndarray):
        return self.check(f).sum() * self.cell_volume

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """<f, g>, antilinear in the first slot."""
        return np.vdot(self.check(f), self.check(g)) * self.cell_volume

    def l2_norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(self.check(f)) ** 2) * self.cell_volume))

    # -- multipliers --------------------------------------------------------

    def sobolev_weight(self, s: float) -> np.ndarray:
        return SobolevWeight(s).multiplier(self)

    def apply_multiplier(self, f: np.ndarray, weight) -> np.ndarray:
        """Apply (1 - Delta)^s, given a SobolevWeight or an exponent s."""
        if not isinstance(weight, SobolevWeight):
            weight = SobolevWeight(float(weight))
        if weight.s == 0:
            return self.check(f).astype(complex, copy=True)
        return sfft.ifftn(sfft.fftn(self.check(f)) * weight.multiplier(self))

    def sobolev_norm(self, f: np.ndarray, s: float) -> float:
        c = self.forward(f)
        return float(np.sqrt(VOLUME * np.sum(self.sobolev_weight(s) * np.abs(c) ** 2)))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return sfft.ifftn(-self.k2 * sfft.fftn(self.check(f)))

    def convolve(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Periodic convolution (f * g)(x) = int_{T^3} f(x - y) g(y) dy."""
        f, g = self.check(f), self.check(g)
        out = sfft.ifftn(sfft.fftn(f) * sfft.fftn(g)) * self.cell_volume
        if np.isrealobj(f) and np.isrealobj(g):
            return out.real
        return out

    def fourier_transform(self, f: np.ndarray) -> np.ndarray:
        """int_{T^3} f(x) e^{-ik.x} dx by grid quadrature, in FFT index order."""
        return sfft.fftn(self.check(f)) * self.cell_volume


@dataclass(frozen=True)
class SobolevWeight:
    """Fourier multiplier (1 + |k|^2)^s."""

    s: float

    def multiplier(self, grid: TorusGrid) -> np.ndarray:
        return (1.0 + grid.k2) ** self.s


def random_field(grid: TorusGrid, rng: np.random.Generator, kmax: int | None = None,
                 normalize: bool = True) -> np.ndarray:
    """Random complex field; band-limited to |k_i| <= kmax when given."""
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    if kmax is not None:
        kx, ky, kz = grid.wavevectors
        mask = (np.abs(kx) <= kmax) & (np.abs(ky) <= kmax) & (np.abs(kz) <= kmax)
        c = c * mask * np.exp(-0.5 * grid.k2 / max(kmax, 1) ** 2)
    f = grid.inverse(c)
    if normalize:
        f /= grid.l2_norm(f)
    return f
