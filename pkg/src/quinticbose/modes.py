"""Finite excited-mode bases: plane waves (constant condensate) or Q-projected,
re-orthonormalised plane waves (general condensate)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import TorusGrid


def wavevectors_by_shell(cutoff: float, include_zero: bool = False) -> np.ndarray:
    """Integer wavevectors with |k|^2 <= cutoff, ordered by |k|^2 and paired k, -k."""
    r = int(np.floor(np.sqrt(cutoff)))
    rng = np.arange(-r, r + 1)
    ks = np.array(np.meshgrid(rng, rng, rng, indexing="ij")).reshape(3, -1).T
    ks = ks[(ks**2).sum(1) <= cutoff]
    out = []
    seen = set()
    # order: shell, then a canonical representative followed by its negative
    for k in sorted(ks.tolist(), key=lambda k: (k[0]**2 + k[1]**2 + k[2]**2, [-c for c in k])):
        t = tuple(k)
        if t in seen:
            continue
        if t == (0, 0, 0):
            seen.add(t)
            if include_zero:
                out.append(t)
            continue
        m = tuple(-c for c in t)
        out += [t, m]
        seen.update((t, m))
    return np.array(out, dtype=int).reshape(-1, 3)


@dataclass
class ModeBasis:
    """Excited one-body modes.

    ``wavevectors`` labels plane waves e_k = (2 pi)^{-3/2} e^{ik.x}.  For a
    non-constant condensate the actual basis functions are the Q-projected plane
    waves after Gram-Schmidt, kept in ``functions`` (shape (M, n, n, n)).
    """

    wavevectors: np.ndarray
    functions: np.ndarray | None = None
    condensate_constant: bool = True

    def __post_init__(self):
        self.wavevectors = np.asarray(self.wavevectors, dtype=int).reshape(-1, 3)
        keys = {tuple(k) for k in self.wavevectors.tolist()}
        if len(keys) != len(self.wavevectors):
            raise ValueError("duplicate wavevectors in mode basis")
        if any(tuple(-c for c in k) not in keys for k in keys):
            raise ValueError("mode basis must be closed under k -> -k")
        if self.condensate_constant and (0, 0, 0) in keys:
            raise ValueError("the zero mode is the condensate and cannot be an excited mode")

    @property
    def size(self) -> int:
        return len(self.wavevectors)

    @property
    def k2(self) -> np.ndarray:
        return (self.wavevectors**2).sum(1).astype(float)

    def negation(self) -> np.ndarray:
        """Permutation index p -> index of -k_p."""
        lut = {tuple(k): i for i, k in enumerate(self.wavevectors.tolist())}
        return np.array([lut[tuple(-c for c in k)] for k in self.wavevectors.tolist()])

    @classmethod
    def from_cutoff(cls, cutoff: float) -> "ModeBasis":
        return cls(wavevectors_by_shell(cutoff))

    @classmethod
    def lowest(cls, M: int) -> "ModeBasis":
        """The M lowest nonzero modes, in +/- pairs (M even)."""
        if M % 2:
            raise ValueError("M_modes must be even (closure under k -> -k)")
        cutoff = 1
        while True:
            ks = wavevectors_by_shell(cutoff)
            if len(ks) >= M:
                return cls(ks[:M])
            cutoff += 1

    def plane_waves(self, grid: TorusGrid) -> np.ndarray:
        return np.array([grid.plane_wave(k) for k in self.wavevectors])

    def basis_functions(self, grid: TorusGrid) -> np.ndarray:
        if self.functions is not None:
            return self.functions
        return self.plane_waves(grid)

    @classmethod
    def projected(cls, wavevectors, u: np.ndarray, grid: TorusGrid, tol: float = 1e-10) -> "ModeBasis":
        """Q-projected plane waves, orthonormalised in the grid inner product.

        Modes that become linearly dependent after projection are dropped.
        """
        ks = np.asarray(wavevectors, dtype=int).reshape(-1, 3)
        u = grid.check(u)
        h3 = grid.cell_volume
        vecs = []
        kept = []
        for k in ks:
            v = grid.plane_wave(k)
            v = v - u * grid.inner(u, v)
            for e in vecs:
                v = v - e * grid.inner(e, v)
            v = v - u * grid.inner(u, v)
            nrm = np.sqrt(np.sum(np.abs(v) ** 2) * h3)
            if nrm > tol:
                vecs.append(v / nrm)
                kept.append(k)
        const = np.allclose(u, u.flat[0])
        obj = cls.__new__(cls)
        obj.wavevectors = np.array(kept, dtype=int).reshape(-1, 3)
        obj.functions = np.array(vecs)
        obj.condensate_constant = const
        return obj
