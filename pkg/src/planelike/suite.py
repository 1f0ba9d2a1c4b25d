"""Small-scale property checks: submodularity, gradients, the brute-force oracle, Birkhoff, doubling.

Every check returns a record ``{"check", "inputs", "measured", "tolerances", "passed"}``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import model as mdl
from .analysis import birkhoff_check
from .lattice import Field
from .solver import (SolverOptions, brute_force_minimize, constrained_minimize, doubled_period_minimize,
                     make_class, minimal_minimizer, pure_phase_minimize, tile, _phase_fields)


def record(check: str, inputs: dict, measured: dict, tolerances: dict, passed: bool) -> dict:
    return {"check": check, "inputs": inputs, "measured": measured, "tolerances": tolerances,
            "passed": bool(passed)}


def random_band_field(cls, phases, rng) -> Field:
    """Uniform values in ``[-1-delta0, 1+delta0]`` with the pure phases as far field."""
    lat = cls.lattice
    b = cls.delta0 + 1.0
    up, um = _phase_fields(phases, lat)
    return Field(lat, rng.uniform(-b, b, lat.shape), up, um)


def check_submodularity(model: mdl.ModelSpec, pairs: int = 200, n: int = 8, direction=(1, 0),
                        M: float = 2.0, seed: int = 0, tol: float = 1e-12) -> dict:
    """``K(u^v) + K(uvv) <= K(u) + K(v)`` and ``P(u^v) + P(uvv) = P(u) + P(v)``."""
    phases = pure_phase_minimize(model, n, len(direction))
    cls = make_class(model, direction, M, n=n)
    rng = np.random.default_rng(seed)
    worst_k, worst_p = np.inf, 0.0
    b = 1.0 + model.delta0
    for k in range(pairs):
        u = random_band_field(cls, phases, rng)
        if k % 2:
            # nearly equal fields crossing each other: small slack
            v = u.copy(np.clip(u.values + 1e-3 * rng.standard_normal(u.values.shape), -b, b))
        else:
            v = random_band_field(cls, phases, rng)
        lo, hi = mdl.submodular_combine(u, v)
        e = [mdl.energy_total(model, cls.lattice, f, method="direct") for f in (u, v, lo, hi)]
        worst_k = min(worst_k, e[0].kinetic + e[1].kinetic - e[2].kinetic - e[3].kinetic)
        dp = e[0].potential + e[1].potential - e[2].potential - e[3].potential
        dm = e[0].mesoscopic + e[1].mesoscopic - e[2].mesoscopic - e[3].mesoscopic
        worst_p = max(worst_p, abs(dp + dm))
    ok = worst_k >= -tol and worst_p <= tol
    return record("submodularity",
                  {"pairs": pairs, "n": n, "direction": list(direction), "M": M, "seed": seed},
                  {"min_kinetic_slack": worst_k, "max_potential_defect": worst_p},
                  {"slack": -tol}, ok)


def check_gradient(model: mdl.ModelSpec, fields: int = 20, n: int = 8, direction=(2, 1),
                   M: float = 3.0, seed: int = 1, eps: float = 1e-4, tol: float = 1e-6) -> dict:
    """Directional and coordinate derivatives against central differences."""
    phases = pure_phase_minimize(model, n, len(direction))
    cls = make_class(model, direction, M, n=n)
    lat = cls.lattice
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(fields):
        u = random_band_field(cls, phases, rng)
        u.values *= 0.95  # room for the probes
        g = mdl.energy_gradient(model, lat, u)
        probes = [rng.standard_normal(lat.shape)]
        for _ in range(3):
            e = np.zeros(lat.shape)
            e.flat[rng.integers(lat.size)] = 1.0
            probes.append(e)
        for d in probes:
            ep = mdl.energy_total(model, lat, u.copy(u.values + eps * d), method="direct").total
            em = mdl.energy_total(model, lat, u.copy(u.values - eps * d), method="direct").total
            fd = (ep - em) / (2 * eps)
            an = float(np.sum(g * d))
            worst = max(worst, abs(an - fd) / max(abs(fd), 1e-300))
    return record("gradient", {"fields": fields, "n": n, "direction": list(direction), "eps": eps,
                               "seed": seed},
                  {"max_relative_error": worst}, {"relative": tol}, worst <= tol)


def oracle_instances(count: int = 10, seed: int = 2) -> list:
    """Tiny 1D models: varied exponent, medium, offsets and strip widths."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        spec = mdl.ModelSpec().with_(s=float(rng.choice([0.25, 0.5, 0.75])), R_bar=1.0,
                                     eta=float(rng.choice([0.0, 0.005, 0.01])),
                                     eps_W=float(rng.uniform(0.0, 0.3)))
        out.append({"model": spec, "n": 2, "M": float(rng.choice([1.0, 1.5, 2.0])),
                    "A": float(rng.choice([0.0, 0.5]))})
    return out


def check_oracle(instances=None, opts: Optional[SolverOptions] = None, tol: float = 1e-9) -> dict:
    """Solver minimum against the quantized brute-force optimum refined by descent."""
    instances = oracle_instances() if instances is None else instances
    opts = opts or SolverOptions()
    diffs, sizes = [], []
    for inst in instances:
        spec, n = inst["model"], inst["n"]
        phases = pure_phase_minimize(spec, n, 1, opts)
        cls = make_class(spec, (1,), inst["M"], n=n, A=inst["A"], L=1.0)
        if cls.lattice.size > 12:
            raise ValueError("oracle instance too large")
        sizes.append(cls.lattice.size)
        q, _ = brute_force_minimize(spec, cls, phases)
        ref = constrained_minimize(spec, cls, phases, q.values, opts)
        got = minimal_minimizer(spec, cls, phases, opts)
        diffs.append(abs(got.f_omega - ref.f_omega))
    worst = max(diffs)
    return record("oracle_equivalence", {"instances": len(instances), "nodes": sizes},
                  {"max_energy_diff": worst, "energy_diffs": diffs}, {"energy": tol}, worst <= tol)


def check_birkhoff(model: mdl.ModelSpec, direction=(1, 0), n: int = 8, M: float = 12.0,
                   opts: Optional[SolverOptions] = None, tol: float = 1e-6) -> dict:
    phases = pure_phase_minimize(model, n, len(direction), opts)
    cls = make_class(model, direction, M, n=n)
    res = minimal_minimizer(model, cls, phases, opts)
    rep = birkhoff_check(cls.lattice, res.field, tol=tol)
    return record("birkhoff", {"direction": list(direction), "n": n, "M": M},
                  {"violations": rep.total, "translations": rep.checked, "converged": res.converged},
                  {"band": tol}, rep.passed and res.converged)


def check_doubling(model: mdl.ModelSpec, direction=(1, 0), m=(2,), n: int = 8, M: float = 12.0,
                   opts: Optional[SolverOptions] = None, tol: float = 1e-6,
                   energy_tol: float = 1e-10) -> dict:
    """Minimal minimizer on the doubled quotient against the tiled base minimizer."""
    phases = pure_phase_minimize(model, n, len(direction), opts)
    cls = make_class(model, direction, M, n=n)
    base = minimal_minimizer(model, cls, phases, opts)
    cls_m, res_m = doubled_period_minimize(model, direction, m, M, phases, n=n, opts=opts)
    tiled = tile(cls_m.lattice, base.field)
    sup = float(np.max(np.abs(res_m.field.values - tiled.values)))
    f_tiled = mdl.energy_renormalized(model, cls_m.lattice, tiled)
    factor = float(np.prod(m))
    rel = abs(f_tiled / (factor * base.f_omega) - 1.0) if base.f_omega != 0 else abs(f_tiled)
    ok = sup <= tol and rel <= energy_tol and base.converged and res_m.converged
    return record("doubling", {"direction": list(direction), "m": list(m), "n": n, "M": M},
                  {"sup_diff": sup, "energy_rel_diff": rel, "f_base": base.f_omega,
                   "f_doubled": res_m.f_omega},
                  {"sup": tol, "energy_relative": energy_tol}, ok)
