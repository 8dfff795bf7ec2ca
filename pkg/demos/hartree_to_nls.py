"""Quintic Hartree vs quintic NLS on the torus.

Evolves a smooth field with the three-body Hartree equation for a growing
N and compares with the local quintic NLS.  The gap shrinks roughly like a
power of N; the fitted slope is printed at the end.

    python demos/hartree_to_nls.py [grid_n]
"""
import sys

import numpy as np

from quinticbose import hartree as hs
from quinticbose.experiments import ExperimentConfig, smooth_initial_field
from quinticbose.grid import TorusGrid

n = int(sys.argv[1]) if len(sys.argv) > 1 else 16
g = TorusGrid(n)
V = ExperimentConfig.for_experiment("gap").potential()
u0 = smooth_initial_field(g)

# mass and energy along one Hartree trajectory
p = hs.EvolutionProblem(g, hs.HARTREE, u0, 0.5, 1e-2, V=V.at(64))
traj = hs.evolve(p, monitor_stride=10)
for row in traj.rows():
    print("t={:.2f} mass={:.15f} energy={:.10f}".format(*row[:3]))

Ns = [4, 16, 64, 256]
table = hs.hartree_nls_gap(u0, V, g, Ns, 0.5, 1e-2)
for N, err, ok in table.rows():
    print(f"N={N:5d}  |u_N - u|_L2 = {err:.4e}  resolved={ok}")
print(f"slope {table.slope:.3f} (beta = {V.beta})")
