"""A minimal minimizer in a periodic medium, step by step.

Runs in well under a minute at n = 8.
"""

import numpy as np

from planelike import analysis as an
from planelike import model as mdl
from planelike.lattice import translate
from planelike.solver import SolverOptions, make_class, minimal_minimizer, pure_phase_minimize

model = mdl.ModelSpec()  # s = 1/2, eta = 0.01, quartic well
print("model:", model.to_mapping())

# %% pure phases on the unit cell
# with eta > 0 the phases are no longer the constants +-1 but stay close
phases = pure_phase_minimize(model, n=8, N=2)
print(f"delta_eta = {phases.delta_eta:.3e}   E(u+) - E(u-) = {phases.energy_plus - phases.energy_minus:.1e}")

# %% admissible class for omega = (2, 1), strip 0 <= omega.x <= 24 (Euclidean width 24/sqrt 5)
cls = make_class(model, (2, 1), 24.0, n=8, L=3.0)
lat = cls.lattice
print("quotient lattice:", lat.shape, "levels x nodes per level")

res = minimal_minimizer(model, cls, phases, SolverOptions(ensemble_size=3))
print(f"F_omega = {res.f_omega:.6f}  converged = {res.converged}")
print("energy split:", {k: round(v, 6) for k, v in res.breakdown.as_dict().items()})

# %% profile across the strip: mean over each level of omega.x
prof = res.field.values.mean(axis=1)
lev = lat.levels.ravel()
for t in range(0, len(lev), max(1, len(lev) // 16)):
    bar = "#" * int(round(20 * (prof[t] + 1.05)))
    print(f"{lev[t]:7.3f} {prof[t]:+.4f} {bar}")

# %% interface width and the Birkhoff ordering
w = an.interface_width(lat, res.field, delta0=model.delta0)
print(f"width of {{|u| < {w.theta}}} along omega/|omega|: {w.width:.3f}")

rep = an.birkhoff_check(lat, res.field)
print(f"Birkhoff: {rep.checked} translations, {rep.total} violations")

# u falls from +1 to -1 along omega, so shifting it up by k with omega.k > 0
# can only raise it pointwise
up = translate(lat, res.field, (1, 0))
print("u(x - e1) >= u(x) everywhere:", bool(np.all(up.values >= res.field.values - 1e-6)))
