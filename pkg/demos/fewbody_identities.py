"""Three bosons on a 4^3 lattice: the excitation map and its generator.

Checks that the map Psi -> (phi_0, ..., phi_3) is an isometry, that the
projected one-body density equals the excitation density, and that the
transformed dynamics obeys the fluctuation generator (with the chi phase).
Takes about a minute.
"""
import numpy as np

from quinticbose import fewbody as fb
from quinticbose.experiments import ExperimentConfig

rng = np.random.default_rng(7)
lat = fb.Lattice(4)
V = ExperimentConfig.for_experiment("fewbody").potential()
model = fb.LatticeModel(lat, V, 3, 3)
H, basis = model.hamiltonian()
print(f"occupation basis: {basis.dim} states, H nnz {H.nnz}")

u = np.ones(lat.S, complex) / np.sqrt(lat.S)
T = basis.to_tensor(fb.random_state(basis, rng))
phis = fb.un_transform(T, u)
print("sector weights:", [f"{np.sum(np.abs(p) ** 2):.4f}" for p in phis])
Q = fb.projector(u)
print(f"density identity defect: {np.abs(Q @ fb.reduced_density(T) @ Q - fb.excitation_density(phis)).max():.1e}")

rep = fb.generator_equivalence_check(lat, V, u, 1e-3, 0.2, model=model, H=H, basis=basis, n_times=3)
bad = fb.generator_equivalence_check(lat, V, u, 1e-3, 0.2, model=model, H=H, basis=basis,
                                     n_times=3, chi_scale=1.01, max_refine=0)
for t, r, b, c in zip(rep.times, rep.residuals, bad.residuals, rep.chi_values):
    print(f"t={t:.3f}  residual {r:.2e}  with 1% phase error {b:.2e}  (0.01 chi = {0.01 * c:.2e})")
