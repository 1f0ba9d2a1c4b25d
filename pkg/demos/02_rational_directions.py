"""Approaching an irrational direction through rational ones.

Continued-fraction convergents of (1, sqrt 2) are computed, a minimal
minimizer is found for the first few, and their values on a fixed window
are compared.  Uses n = 4 to stay quick; the acceptance run uses n = 8.
"""

import math

from planelike import analysis as an
from planelike.model import ModelSpec
from planelike.solver import SolverOptions, pure_phase_minimize

w = [1.0, math.sqrt(2.0)]
for d in an.rational_approximation(w, 6):
    print(f"{str(d.omega):10s} angular error {an.angular_error(d.omega, w):.2e}")

model = ModelSpec()
phases = pure_phase_minimize(model, 4, 2)
rep = an.irrational_convergence(model, phases, w, count=3, width=8.0, n=4, L=3.0,
                                opts=SolverOptions(ensemble_size=2))
for r in rep["runs"]:
    print(f"{str(tuple(r['direction'])):10s} F_omega {r['f_omega']:.5f}  converged {r['converged']}")
print("window gaps:", ", ".join(f"{g:.3e}" for g in rep["gaps"]))
print("strictly decreasing:", rep["decreasing"])
