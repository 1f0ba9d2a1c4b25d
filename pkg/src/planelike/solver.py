"""Minimization engines: pure phases, constrained strip problems, minimal minimizers.

All descents are projected gradient with Barzilai-Borwein steps and Armijo
backtracking.  Energy decrements are evaluated exactly from the quadratic
structure of the kinetic term, which keeps the recorded trace monotone even
when the decrements fall far below the size of the energy itself.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model as mdl
from .lattice import Field, LatticeQuotient, build_quotient, translate


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 20000
    ensemble_size: int = 8
    seed: int = 0
    threads: int = 1
    step_rule: str = "bb"
    refresh: int = 64
    soft_every: int = 16
    combine_tol: float = 1e-7
    energy_tol: float = 1e-9

    def __post_init__(self):
        if self.step_rule not in ("bb", "armijo"):
            raise SolverError(f"unknown step rule {self.step_rule!r}")
        if self.tol <= 0 or self.max_iter < 1 or self.ensemble_size < 1 or self.threads < 1:
            raise SolverError("invalid solver options")


# ------------------------------------------------------------ descent core


class _Problem:
    """Energy pieces needed by the descent: kinetic operator plus local terms."""

    hN: float
    lo: np.ndarray
    hi: np.ndarray
    soft_every: int = 0

    def translation_direction(self, u):
        return None

    def kin_grad(self, u):
        raise NotImplementedError

    def quad(self, d):
        """``2 h^{2N} (S d - K d)``: kinetic gradient change for a step ``d``."""
        raise NotImplementedError

    def local(self, u):
        """Per-node ``W(x, u) + H u`` derivative (without the ``h^N`` factor)."""
        return mdl.well_prime(self.pot, u) * self.wfac + self.H

    def local_delta(self, u, d):
        return np.sum(mdl.well_delta(self.pot, u, d) * self.wfac + self.H * d)


@dataclass
class DescentInfo:
    converged: bool
    iterations: int
    pg_norm: float
    trace: list


def projected_descent(prob: _Problem, u0, f0: float, opts: SolverOptions):
    """Minimize over the box ``[lo, hi]``; returns ``(u, f, info)``.

    ``f0`` is the energy of the projected start; subsequent values are
    accumulated from exact decrements.
    """
    lo, hi, hN = prob.lo, prob.hi, prob.hN
    u = np.clip(u0, lo, hi)
    f = f0
    gk = prob.kin_grad(u)
    g = gk + hN * prob.local(u)
    trace = [f]
    alpha = prob.alpha0
    pg = np.inf
    use_bb = opts.step_rule == "bb"
    for it in range(opts.max_iter + 1):
        ghat = g / hN
        pg = float(np.max(np.abs(np.clip(u - ghat, lo, hi) - u)))
        if pg <= opts.tol:
            return u, f, DescentInfo(True, it, pg, trace)
        if it == opts.max_iter:
            break
        while True:
            u_new = np.clip(u - alpha * ghat, lo, hi)
            d = u_new - u
            gd = float(np.sum(g * d))
            q = prob.quad(d)
            df = float(np.sum(gk * d)) + 0.5 * float(np.sum(q * d)) + hN * float(prob.local_delta(u, d))
            if df <= 1e-4 * gd or (gd == 0.0):
                break
            alpha *= 0.5
            if alpha < 1e-14 * prob.alpha0:
                # no decrease possible at floating-point resolution
                return u, f, DescentInfo(pg <= opts.tol, it, pg, trace)
        if (it + 1) % opts.refresh == 0:
            gk_new = prob.kin_grad(u_new)
        else:
            gk_new = gk + q
        g_new = gk_new + hN * prob.local(u_new)
        f = f + df
        trace.append(f)
        if use_bb:
            y = (g_new - g) / hN
            sy = float(np.sum(d * y))
            if sy > 0:
                if it % 2 == 0:
                    alpha = float(np.sum(d * d)) / sy
                else:
                    alpha = sy / float(np.sum(y * y))
                alpha = min(max(alpha, 1e-3 * prob.alpha0), 1e6 * prob.alpha0)
            else:
                alpha = 10 * prob.alpha0
        else:
            alpha = min(2 * alpha, prob.alpha0 * 4)
        u, gk, g = u_new, gk_new, g_new
        if prob.soft_every and opts.soft_every and (it + 1) % opts.soft_every == 0:
            step = _soft_step(prob, u, gk, g)
            if step is not None:
                u, gk, g, df = step
                f = f + df
                trace.append(f)
    return u, f, DescentInfo(False, opts.max_iter, pg, trace)


def _softest_mode(prob, u, free, v0):
    """Lowest Hessian eigenvector on the free nodes, seeded with ``v0`` (Lanczos).

    A rough direction suffices: the step along it is an exact line search.
    """
    from scipy.sparse.linalg import LinearOperator, eigsh

    hN = prob.hN
    shape = u.shape
    idx = np.flatnonzero(free)
    curv = (12 * u * u - 4) * prob.wfac
    shift = 2.0 / prob.alpha0

    def mv(x):
        full = np.zeros(shape)
        full.flat[idx] = x
        hv = (prob.quad(full) + hN * curv * full) / hN
        return shift * x - hv.flat[idx]

    op = LinearOperator((idx.size, idx.size), matvec=mv, dtype=float)
    try:
        _, vec = eigsh(op, k=1, which="LA", v0=v0.flat[idx], tol=1e-3, ncv=min(8, idx.size),
                       maxiter=400)
    except Exception:
        return v0
    out = np.zeros(shape)
    out.flat[idx] = vec[:, 0]
    return out


def _soft_step(prob, u, gk, g):
    """Exact line search along the translation direction of the profile.

    The interface position is an almost free mode (the pinning by the medium
    is weak), which plain gradient steps resolve very slowly.
    """
    v = prob.translation_direction(u)
    if v is None or prob.pot.well != "quartic":
        return None
    lo, hi = prob.lo, prob.hi
    free = (u > lo) & (u < hi)
    v = np.where(free, v, 0.0)
    if not np.any(v):
        return None
    prev = getattr(prob, "_soft_prev", None)
    if prev is not None:
        v = np.where(free, prev, 0.0) + 1e-3 * v / max(float(np.max(np.abs(v))), 1e-300)
    v = _softest_mode(prob, u, free, v)
    prob._soft_prev = v
    # feasible interval for t
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(v > 0, (hi - u) / v, np.where(v < 0, (lo - u) / v, np.inf))
        dn = np.where(v > 0, (lo - u) / v, np.where(v < 0, (hi - u) / v, -np.inf))
    t_hi, t_lo = float(np.min(up)), float(np.max(dn))
    hN = prob.hN
    qv = prob.quad(v)
    wf = prob.wfac
    c1 = float(np.sum(g * v))
    c2 = 0.5 * float(np.sum(qv * v)) + hN * float(np.sum(wf * (6 * u * u - 2) * v * v))
    c3 = hN * float(np.sum(wf * 4 * u * v ** 3))
    c4 = hN * float(np.sum(wf * v ** 4))
    poly = np.array([c4, c3, c2, c1, 0.0])
    crit = np.roots(np.polyder(poly))
    cand = [t_lo, t_hi] + [z.real for z in crit if abs(z.imag) < 1e-12 * (1 + abs(z))]
    cand = [t for t in cand if np.isfinite(t) and t_lo <= t <= t_hi]
    if not cand:
        return None
    t = min(cand, key=lambda t: np.polyval(poly, t))
    u_new = np.clip(u + t * v, lo, hi)
    d = u_new - u
    q = prob.quad(d)
    df = float(np.sum(gk * d)) + 0.5 * float(np.sum(q * d)) + hN * float(prob.local_delta(u, d))
    if not df < 0:
        return None
    gk_new = gk + q
    return u_new, gk_new, gk_new + hN * prob.local(u_new), df


class _CellProblem(_Problem):
    def __init__(self, model: mdl.ModelSpec, n: int, N: int):
        self.model, self.n, self.N = model, n, N
        self.op = mdl.cell_operator(model.kernel, n, N)
        self.pot = model.potential
        self.wfac = mdl.W_cell_factor(model, n, N)
        self.H = mdl.H_cell(model, n, N)
        h = 1.0 / n
        self.hN, self.h2N = h ** N, h ** (2 * N)
        b = model.bound
        self.lo = np.full(self.op.shape, -b)
        self.hi = np.full(self.op.shape, b)
        self.alpha0 = 1.0 / (2 * self.h2N / self.hN * float(self.op.row_sum.max()) + 16.0)

    def kin_grad(self, u):
        return 2 * self.h2N * (self.op.row_sum * u - self.op.conv(u))

    quad = kin_grad

    def energy(self, u):
        return mdl.cell_energy(self.model, self.n, self.N, u).total


class _StripProblem(_Problem):
    def __init__(self, model: mdl.ModelSpec, lat: LatticeQuotient, far_low, far_high, lo, hi):
        self.model, self.lat = model, lat
        self.op = mdl.quotient_operator(model.kernel, lat)
        self.pot = model.potential
        med = mdl.MediumOnBand(model, lat)
        self.wfac, self.H = med.wfac, med.H
        self.far_low, self.far_high = far_low, far_high
        self.hN, self.h2N = lat.h ** lat.N, lat.h ** (2 * lat.N)
        self.lo, self.hi = lo, hi
        self.alpha0 = 1.0 / (2 * self.h2N / self.hN * float(self.op.row_sum.max()) + 16.0)
        self._zero = np.zeros(self.op.src_shape)
        self.soft_every = 1

    def translation_direction(self, u):
        """``u(x) - u(x - h v)``: difference along the lift vector (one level)."""
        ext = self.field(u).extended(1)
        return u - ext[:-2]

    def field(self, u) -> Field:
        return Field(self.lat, u, self.far_low, self.far_high)

    def kin_grad(self, u):
        return mdl.kinetic_gradient(self.model, self.lat, self.field(u))

    def quad(self, d):
        P, T = self.op.P, self.lat.shape[0]
        ext = self._zero.copy()
        ext[P:P + T] = d
        return 2 * self.h2N * (self.op.row_sum * d - self.op.apply(ext))

    def energy(self, u):
        return mdl.energy_renormalized(self.model, self.lat, self.field(u))


# ------------------------------------------------------------- pure phases


@dataclass
class PurePhases:
    u_plus: np.ndarray
    u_minus: np.ndarray
    n: int
    N: int
    delta_eta: float
    energy_plus: float
    energy_minus: float
    iterations: tuple = (0, 0)

    @property
    def energy_gap(self) -> float:
        return abs(self.energy_plus - self.energy_minus)


def pure_phase_minimize(model: mdl.ModelSpec, n: int, N: int = 2,
                        opts: Optional[SolverOptions] = None) -> PurePhases:
    """Periodic minimizers on the unit cell started from the constants +1 and -1."""
    opts = opts or SolverOptions()
    if n % 2:
        raise SolverError("n must be even so that the half-cell shift is a grid shift")
    prob = _CellProblem(model, n, N)
    out = []
    for sign in (1.0, -1.0):
        u0 = np.full(prob.op.shape, sign)
        u, _, info = projected_descent(prob, u0, prob.energy(u0), opts)
        if not info.converged:
            raise ConvergenceError(f"pure phase {'+' if sign > 0 else '-'} did not converge "
                                   f"(projected gradient {info.pg_norm:.3g})")
        out.append((u, info.iterations))
    (up, itp), (um, itm) = out
    delta = max(float(np.max(np.abs(up - 1.0))), float(np.max(np.abs(um + 1.0))))
    if delta > model.delta0:
        raise SolverError(f"pure phase deviates by {delta:.3g} > delta0; eta is too large")
    return PurePhases(up, um, n, N, delta, prob.energy(up), prob.energy(um), (itp, itm))


# ------------------------------------------------------ admissible classes


@dataclass(frozen=True, eq=False)
class AdmissibleClass:
    """Functions with ``u >= 1-delta0`` for ``omega.x <= A``, ``u <= -1+delta0`` for ``omega.x >= B``."""

    lattice: LatticeQuotient
    delta0: float

    @property
    def A(self) -> float:
        return self.lattice.A

    @property
    def B(self) -> float:
        return self.lattice.B

    def bounds(self):
        lat, d = self.lattice, self.delta0
        lev = np.broadcast_to(lat.levels, lat.shape)
        eps = 1e-12
        lo = np.where(lev <= self.A + eps, 1.0 - d, -1.0 - d)
        hi = np.where(lev >= self.B - eps, -1.0 + d, 1.0 + d)
        return lo, hi

    def contains(self, fld: Field) -> bool:
        lo, hi = self.bounds()
        return bool(np.all(fld.values >= lo) and np.all(fld.values <= hi))

    def project(self, values) -> np.ndarray:
        lo, hi = self.bounds()
        return np.clip(values, lo, hi)


def make_class(model: mdl.ModelSpec, direction, M: float, n: int = 16, m=None,
               A: float = 0.0, L: Optional[float] = None) -> AdmissibleClass:
    L = model.kernel.R_bar if L is None else L
    lat = build_quotient(direction, m=m, n=n, A=A, B=A + M, L=L)
    return AdmissibleClass(lat, model.delta0)


@dataclass
class MinimizerResult:
    field: Field
    f_omega: float
    breakdown: mdl.EnergyBreakdown
    iterations: int
    final_gradient_norm: float
    active_constraints: dict
    converged: bool = True
    trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _phase_fields(phases: PurePhases, lat: LatticeQuotient):
    if phases.n != lat.n or phases.N != lat.N:
        raise SolverError("pure phases were computed on a different grid")
    return phases.u_plus, phases.u_minus


def active_counts(cls: AdmissibleClass, values, tol: float = 1e-12) -> dict:
    lat, d = cls.lattice, cls.delta0
    lev = np.broadcast_to(lat.levels, lat.shape)
    below, above = lev <= cls.A + 1e-12, lev >= cls.B - 1e-12
    return {
        "lower_phase": int(np.sum(below & (values <= 1.0 - d + tol))),
        "upper_phase": int(np.sum(above & (values >= -1.0 + d - tol))),
        "box_low": int(np.sum(values <= -1.0 - d + tol)),
        "box_high": int(np.sum(values >= 1.0 + d - tol)),
    }


def constrained_minimize(model: mdl.ModelSpec, cls: AdmissibleClass, phases: PurePhases,
                         u0, opts: Optional[SolverOptions] = None) -> MinimizerResult:
    """Minimize ``F_omega`` over the admissible class starting from ``u0`` (projected)."""
    opts = opts or SolverOptions()
    lat = cls.lattice
    up, um = _phase_fields(phases, lat)
    lo, hi = cls.bounds()
    prob = _StripProblem(model, lat, up, um, lo, hi)
    u0 = np.asarray(u0.values if isinstance(u0, Field) else u0, dtype=float)
    start = np.clip(u0, lo, hi)
    u, f, info = projected_descent(prob, start, prob.energy(start), opts)
    fld = prob.field(u)
    res = MinimizerResult(fld, f, mdl.energy_total(model, lat, fld), info.iterations,
                          info.pg_norm, active_counts(cls, u), info.converged, info.trace)
    if not info.converged:
        res.warnings.append(f"iteration budget exhausted (projected gradient {info.pg_norm:.3g})")
    return res


def cross_section(lat: LatticeQuotient) -> float:
    """Measure of the quotient cross-section ``{omega.x = c}`` (interface area per cell)."""
    return lat.direction.norm * float(np.prod(lat.m)) if lat.N > 1 else 1.0


def _random_init(cls: AdmissibleClass, rng) -> np.ndarray:
    lat = cls.lattice
    lev = np.broadcast_to(lat.levels, lat.shape)
    xi = rng.uniform(cls.A, cls.B)
    base = np.where(lev < xi, 1.0, -1.0)
    return cls.project(base + rng.uniform(-0.5, 0.5, lat.shape))


def canonical_inits(cls: AdmissibleClass) -> list:
    """Linear profile across the strip and a sharp step at its middle."""
    lat = cls.lattice
    lev = np.broadcast_to(lat.levels, lat.shape)
    lin = np.clip(1.0 - 2.0 * (lev - cls.A) / (cls.B - cls.A), -1.0, 1.0)
    step = np.where(lev < 0.5 * (cls.A + cls.B), 1.0, -1.0)
    return [cls.project(lin), cls.project(step)]


def _run_many(model, cls, phases, inits, opts):
    def job(u0):
        return constrained_minimize(model, cls, phases, u0, opts)

    if opts.threads == 1 or len(inits) == 1:
        return [job(u) for u in inits]
    with ThreadPoolExecutor(max_workers=opts.threads) as ex:
        return list(ex.map(job, inits))


def minimal_minimizer(model: mdl.ModelSpec, cls: AdmissibleClass, phases: PurePhases,
                      opts: Optional[SolverOptions] = None, extra_inits=(),
                      log: Optional[list] = None) -> MinimizerResult:
    """Approximate the pointwise least minimizer of ``F_omega`` on the class.

    Ensemble descents are merged by pointwise minima (which never increase
    the combined energy) and re-descended; the result is then pushed to the
    lowest integer translate whose energy stays within tolerance.
    """
    opts = opts or SolverOptions()
    lat = cls.lattice
    inits = [_random_init(cls, np.random.default_rng([opts.seed, k]))
             for k in range(opts.ensemble_size)]
    inits += canonical_inits(cls) + [cls.project(np.asarray(u, float)) for u in extra_inits]
    members = _run_many(model, cls, phases, inits, opts)
    log = [] if log is None else log
    warnings = [f"member {i}: {w}" for i, r in enumerate(members) for w in r.warnings]
    good = [r for r in members if r.converged]
    if not good:
        res = min(members, key=lambda r: r.f_omega)
        res.warnings = warnings
        return res
    etol = opts.energy_tol * cross_section(lat)
    best = min(good, key=lambda r: r.f_omega)
    pool = [r for r in good if r.f_omega <= best.f_omega + etol]

    # min-combination fixed point
    cur = best
    for _ in range(20):
        w = cur.field
        for r in pool:
            lo_f, hi_f = mdl.submodular_combine(w, r.field)
            f_lo = mdl.energy_renormalized(model, lat, lo_f)
            f_hi = mdl.energy_renormalized(model, lat, hi_f)
            slack = mdl.energy_renormalized(model, lat, w) + r.f_omega - f_lo - f_hi
            log.append({"combine": len(log), "slack": slack})
            if slack < -1e-10 * max(1.0, abs(f_lo) + abs(f_hi)):
                warnings.append(f"min-combination raised the energy by {-slack:.3g}")
            w = lo_f
        nxt = constrained_minimize(model, cls, phases, w, opts)
        if not nxt.converged or nxt.f_omega > best.f_omega + etol:
            if not nxt.converged:
                warnings.extend(nxt.warnings)
            break
        change = float(np.max(np.abs(nxt.field.values - cur.field.values)))
        cur = nxt
        if change <= opts.combine_tol:
            break
    cur = _lowest_translate(model, cls, phases, cur, best.f_omega + etol, opts, warnings)
    cur.warnings = warnings + cur.warnings
    return cur


def _descend_translate(model, cls, phases, res: MinimizerResult, j: int, opts):
    lat = cls.lattice
    k = -j * np.asarray(lat.basis.lift)
    shifted = translate(lat, res.field, k)
    return constrained_minimize(model, cls, phases, shifted, opts)


def _lowest_translate(model, cls, phases, cur, f_max, opts, warnings):
    """Move down by integer translations (``omega.k = -j``) while the energy stays minimal.

    Jumps double after each accepted translate and halve after a rejection.
    """
    cap = max(1, int(cls.B - cls.A))
    step, budget = 1, 4 * int(math.log2(max(2.0, cls.B - cls.A))) + 8
    for _ in range(budget):
        cand = _descend_translate(model, cls, phases, cur, step, opts)
        drop = cur.field.values - cand.field.values
        ok = (cand.converged and cand.f_omega <= f_max
              and np.min(drop) >= -opts.combine_tol and np.max(drop) > opts.combine_tol)
        if ok:
            cur = cand
            step = min(2 * step, cap)
        elif step == 1:
            break
        else:
            step //= 2
    return cur


def brute_force_minimize(model: mdl.ModelSpec, cls: AdmissibleClass, phases: PurePhases,
                         levels=None, batch: int = 1 << 16):
    """Exhaustive minimum of ``F_omega`` over quantized values (tiny instances only).

    Returns ``(field, F_omega(field))``; ties go to the lexicographically smallest vector.
    """
    lat = cls.lattice
    if lat.size > 12:
        raise SolverError(f"instance too large for enumeration ({lat.size} nodes > 12)")
    d = model.delta0
    levels = sorted(levels if levels is not None else
                    [-1 - d, -1.0, -1 + d, 0.0, 1 - d, 1.0, 1 + d])
    if len(levels) > 7:
        raise SolverError("at most 7 quantization levels")
    lo, hi = cls.bounds()
    choices = [[v for v in levels if lo.flat[i] - 1e-15 <= v <= hi.flat[i] + 1e-15]
               for i in range(lat.size)]
    if any(not c for c in choices):
        raise SolverError("no admissible quantized value for some node")
    up, um = _phase_fields(phases, lat)
    table = mdl.pair_table(model, lat, up, um)
    best_val, best_vec = np.inf, None
    it = itertools.product(*choices)
    while True:
        chunk = list(itertools.islice(it, batch))
        if not chunk:
            break
        V = np.array(chunk)
        e = table.energy(V)
        i = int(np.argmin(e))
        if e[i] < best_val:
            best_val, best_vec = float(e[i]), V[i].copy()
    fld = Field(lat, best_vec.reshape(lat.shape), up, um)
    return fld, mdl.energy_renormalized(model, lat, fld, "direct")


def doubled_period_minimize(model: mdl.ModelSpec, direction, m, M: float, phases: PurePhases,
                            n: int = 16, A: float = 0.0, L: Optional[float] = None,
                            opts: Optional[SolverOptions] = None, extra_inits=()):
    """Minimal minimizer on the ``~_m`` quotient (periods multiplied by ``m``)."""
    cls = make_class(model, direction, M, n=n, m=m, A=A, L=L)
    return cls, minimal_minimizer(model, cls, phases, opts, extra_inits)


def tile(lat_m: LatticeQuotient, fld: Field) -> Field:
    """The ``~``-periodic field on the ``~_m`` quotient equal to ``fld``."""
    reps = (1,) + tuple(lat_m.m)
    base = fld.lattice
    if base.key[0] != lat_m.key[0] or base.shape[0] != lat_m.shape[0]:
        raise SolverError("incompatible lattices for tiling")
    return Field(lat_m, np.tile(fld.values, reps), fld.far_low, fld.far_high)
