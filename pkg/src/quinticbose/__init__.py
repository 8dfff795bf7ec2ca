"""Numerical laboratory for quintic Hartree / NLS dynamics and Bogoliubov theory
of Bose gases with three-body interactions on the torus."""

from .grid import TorusGrid, SobolevWeight, random_field
from .potential import (PairProfile, ThreeBodyPotential, coupling_b0, hartree_nonlinearity,
                        partial_integral_W2, sobolev_ratio_diagnostic)

__version__ = "0.1.0"
