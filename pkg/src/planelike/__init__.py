"""Plane-like minimizers of nonlocal phase-field energies in periodic media."""

__version__ = "0.1.0"

from .lattice import (Direction, Field, LatticeError, LatticeQuotient, SublatticeBasis,
                      build_quotient, neighbors_within, translate)
from .model import (EnergyBreakdown, KernelSpec, MesoSpec, ModelError, ModelSpec, PotentialSpec,
                    energy_gradient, energy_renormalized, energy_total, kernel_eval, psi_s,
                    submodular_combine)
from .solver import (AdmissibleClass, ConvergenceError, MinimizerResult, PurePhases,
                     SolverError, SolverOptions, brute_force_minimize, constrained_minimize,
                     doubled_period_minimize, make_class, minimal_minimizer, pure_phase_minimize)

__all__ = [
    "Direction", "Field", "LatticeError", "LatticeQuotient", "SublatticeBasis", "build_quotient",
    "neighbors_within", "translate", "EnergyBreakdown", "KernelSpec", "MesoSpec", "ModelError",
    "ModelSpec", "PotentialSpec", "energy_gradient", "energy_renormalized", "energy_total",
    "kernel_eval", "psi_s", "submodular_combine", "AdmissibleClass", "ConvergenceError",
    "MinimizerResult", "PurePhases", "SolverError", "SolverOptions", "brute_force_minimize",
    "constrained_minimize", "doubled_period_minimize", "make_class", "minimal_minimizer",
    "pure_phase_minimize",
]
