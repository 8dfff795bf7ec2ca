"""Strang-split spectral integrator for the quintic NLS and the quintic Hartree
equation on T^3, with conserved-quantity monitors and Hartree -> NLS sweeps."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .grid import TorusGrid
from .potential import ThreeBodyPotential, coupling_b0, hartree_nonlinearity

log = logging.getLogger(__name__)

NLS = "quintic_nls"
HARTREE = "quintic_hartree"


class BlowUpError(FloatingPointError):
    """Non-finite values appeared in the solution."""

    def __init__(self, time: float):
        super().__init__(f"non-finite field at t = {time:.6g}")
        self.time = time


class H4GrowthWarning(RuntimeWarning):
    pass


@dataclass
class EvolutionProblem:
    grid: TorusGrid
    kind: str
    initial: np.ndarray
    t_final: float
    dt: float
    b0: float | None = None
    V: ThreeBodyPotential | None = None
    scheme: str = "strang_splitting"
    workers: int | None = None

    def __post_init__(self):
        if self.kind not in (NLS, HARTREE):
            raise ValueError(f"unknown equation kind {self.kind!r}")
        if self.kind == NLS and self.b0 is None:
            raise ValueError("quintic_nls needs b0")
        if self.kind == HARTREE and self.V is None:
            raise ValueError("quintic_hartree needs a potential")
        if self.scheme != "strang_splitting":
            raise ValueError("only strang_splitting is implemented")
        if not (self.dt > 0 and self.t_final > 0 and self.dt <= self.t_final):
            raise ValueError("need 0 < dt <= t_final")
        self.initial = np.asarray(self.grid.check(self.initial), dtype=complex)
        norm = self.grid.l2_norm(self.initial)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"initial field must have unit L2 norm, got {norm:.12g}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def potential(self, u: np.ndarray) -> np.ndarray:
        """Pointwise nonlinear potential: b0 |u|^4 or the Hartree F_u."""
        if self.kind == NLS:
            d = u.real**2 + u.imag**2
            return self.b0 * d * d
        return hartree_nonlinearity(u, self.V, self.grid)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: np.ndarray
    monitors: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def rows(self):
        keys = ("mass", "energy", "h1", "h2", "h4", "linf")
        for i, t in enumerate(self.times):
            yield (t,) + tuple(self.monitors[k][i] for k in keys)


def _kinetic_phase(grid: TorusGrid, dt: float) -> np.ndarray:
    return np.exp(-1j * grid.k2 * dt)


def step_strang(u: np.ndarray, problem: EvolutionProblem, dt: float,
                _half_phase: np.ndarray | None = None) -> np.ndarray:
    """One Strang step: half kinetic, exact nonlinear phase, half kinetic."""
    grid = problem.grid
    half = _kinetic_phase(grid, dt / 2) if _half_phase is None else _half_phase
    w = problem.workers
    u = sfft.ifftn(half * sfft.fftn(u, workers=w), workers=w)
    u = u * np.exp(-1j * dt * problem.potential(u))
    return sfft.ifftn(half * sfft.fftn(u, workers=w), workers=w)


def energy(u: np.ndarray, problem: EvolutionProblem) -> float:
    """int |grad u|^2 + (1/3) int F_u |u|^2 (Hartree) or + (b0/3) int |u|^6 (NLS)."""
    grid = problem.grid
    u = grid.check(u)
    c = grid.forward(u)
    kinetic = grid.volume * np.sum(grid.k2 * np.abs(c) ** 2)
    d = np.abs(u) ** 2
    return float(kinetic + grid.integrate(problem.potential(u) * d).real / 3.0)


def monitors(u: np.ndarray, problem: EvolutionProblem) -> dict:
    grid = problem.grid
    c2 = np.abs(grid.forward(u)) ** 2 * grid.volume
    w = 1.0 + grid.k2
    return {
        "mass": float(np.sum(np.abs(u) ** 2) * grid.cell_volume),
        "energy": energy(u, problem),
        "h1": float(np.sqrt(np.sum(w * c2))),
        "h2": float(np.sqrt(np.sum(w**2 * c2))),
        "h4": float(np.sqrt(np.sum(w**4 * c2))),
        "linf": float(np.max(np.abs(u))),
    }


def evolve(problem: EvolutionProblem, stride: int | None = None,
           monitor_stride: int | None = None) -> Trajectory:
    """Integrate to t_final; snapshots every ``stride`` steps (default: ends only)."""
    n = problem.n_steps
    stride = stride or n
    monitor_stride = monitor_stride or max(1, n // 100)
    half = _kinetic_phase(problem.grid, problem.dt / 2)
    u = problem.initial.copy()
    times, snaps = [0.0], [u.copy()]
    mon_t, recs = [0.0], [monitors(u, problem)]
    h4_0 = recs[0]["h4"]
    notes = []
    for i in range(1, n + 1):
        u = step_strang(u, problem, problem.dt, half)
        t = i * problem.dt
        if i % monitor_stride == 0 or i == n:
            if not np.all(np.isfinite(u)):
                raise BlowUpError(t)
            rec = monitors(u, problem)
            mon_t.append(t)
            recs.append(rec)
            if rec["h4"] > 10.0 * h4_0 and not notes:
                msg = f"H4 norm grew beyond 10x its initial value at t = {t:.4g}"
                notes.append(msg)
                warnings.warn(msg, H4GrowthWarning)
        if i % stride == 0 or i == n:
            times.append(t)
            snaps.append(u.copy())
    mons = {k: np.array([r[k] for r in recs]) for k in recs[0]}
    traj = Trajectory(np.array(mon_t), np.array(snaps), mons, notes)
    traj.snapshot_times = np.array(times)
    return traj


def final_state(problem: EvolutionProblem) -> np.ndarray:
    """Endpoint only, without monitors."""
    half = _kinetic_phase(problem.grid, problem.dt / 2)
    u = problem.initial.copy()
    for i in range(problem.n_steps):
        u = step_strang(u, problem, problem.dt, half)
    if not np.all(np.isfinite(u)):
        raise BlowUpError(problem.t_final)
    return u


def richardson_ratio(problem: EvolutionProblem, u_fine: np.ndarray | None = None) -> float:
    """||u_{4dt} - u_{2dt}|| / ||u_{2dt} - u_dt|| at t_final (about 4 for order 2).

    ``u_fine`` may pass an already computed endpoint at the problem's own dt.
    """
    from dataclasses import replace

    grid = problem.grid
    if u_fine is None:
        u_fine = final_state(problem)
    u2 = final_state(replace(problem, dt=2 * problem.dt))
    u4 = final_state(replace(problem, dt=4 * problem.dt))
    return grid.l2_norm(u4 - u2) / grid.l2_norm(u2 - u_fine)


@dataclass
class GapTable:
    N: np.ndarray
    error: np.ndarray
    resolved: np.ndarray
    slope: float

    def rows(self):
        for N, e, r in zip(self.N, self.error, self.resolved):
            yield int(N), float(e), bool(r)


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def resolved(V: ThreeBodyPotential, grid: TorusGrid) -> bool:
    """Resolution rule: at least four grid points across the rescaled core."""
    return V.scale <= grid.n / 4


def hartree_nls_gap(u0: np.ndarray, V: ThreeBodyPotential, grid: TorusGrid, N_list,
                    t: float, dt: float, workers: int | None = None, jobs: int = 1) -> GapTable:
    """L2 distance at time t between the Hartree solution for V_N and the NLS solution.

    The NLS coupling is the continuum b0 of the same profile.
    """
    u0 = np.asarray(grid.check(u0), dtype=complex)
    b0 = coupling_b0(V)
    nls = final_state(EvolutionProblem(grid, NLS, u0, t, dt, b0=b0, workers=workers))
    flags = [resolved(V.at(N), grid) for N in N_list]

    def run(N):
        p = EvolutionProblem(grid, HARTREE, u0, t, dt, V=V.at(N), workers=workers)
        return grid.l2_norm(final_state(p) - nls)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as ex:
            errs = list(ex.map(run, N_list))
    else:
        errs = [run(N) for N in N_list]
    errs = np.array(errs)
    flags = np.array(flags)
    for N, ok in zip(N_list, flags):
        if not ok:
            log.warning("N = %s violates the resolution rule; excluded from the fit", N)
    Ns = np.asarray(N_list, dtype=float)
    slope = loglog_slope(Ns[flags], errs[flags])
    return GapTable(Ns, errs, flags, slope)
