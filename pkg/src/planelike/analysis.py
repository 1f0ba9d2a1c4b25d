"""Structural checks on computed minimizers.

Birkhoff ordering, interface width, energy growth in balls, stability of the
minimal minimizer under strip enlargement, an empirical Hoelder seminorm and
rational approximation of irrational directions.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from . import model as mdl
from .lattice import Direction, Field, LatticeQuotient, LatticeError, _offsets_within, translate
from .solver import (MinimizerResult, PurePhases, SolverOptions, make_class,
                     minimal_minimizer, constrained_minimize, cross_section)


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------- Birkhoff


@dataclass
class BirkhoffReport:
    direction: tuple
    levels: list
    tol: float
    violations: dict  # "k" -> count
    checked: int

    @property
    def total(self) -> int:
        return int(sum(self.violations.values()))

    @property
    def passed(self) -> bool:
        return self.total == 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        d["passed"] = self.passed
        return d


def default_translations(N: int, radius: int = 2) -> list:
    rng = range(-radius, radius + 1)
    return [k for k in itertools.product(rng, repeat=N) if any(k)]


def birkhoff_check(lat: LatticeQuotient, fld: Field, levels=None, translations=None,
                   tol: float = 1e-6) -> BirkhoffReport:
    """Count violations of ``tau_k {u > theta} <= {u > theta}`` for ``omega.k <= 0``.

    A node violates only when the two values sit on opposite sides of the
    level by more than ``tol``.  For ``omega.k >= 0`` the reverse inclusion is
    checked.
    """
    levels = list(np.linspace(-0.9, 0.9, 7)) if levels is None else [float(t) for t in levels]
    translations = default_translations(lat.N) if translations is None else translations
    om = np.asarray(lat.direction.omega)
    u = fld.values
    out = {}
    for k in translations:
        ka = np.asarray(k)
        if ka.shape != (lat.N,) or not np.all(np.equal(np.mod(ka, 1), 0)):
            raise LatticeError(f"translation {k} is not an integer vector")
        ka = ka.astype(np.int64)
        tu = translate(lat, fld, ka).values
        s = int(om @ ka)
        count = 0
        for th in levels:
            if s <= 0:
                count += int(np.sum((tu > th + tol) & (u < th - tol)))
            if s >= 0:
                count += int(np.sum((u > th + tol) & (tu < th - tol)))
        out[str(tuple(int(x) for x in ka))] = count
    return BirkhoffReport(lat.direction.omega, levels, tol, out, len(translations))


# ------------------------------------------------------------------ width


@dataclass
class WidthReport:
    direction: tuple
    M: float
    theta: float
    width: float
    empty: bool
    lower: float = float("nan")
    upper: float = float("nan")
    distance_to_upper: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def interface_width(lat: LatticeQuotient, fld: Field, theta: Optional[float] = None,
                    delta0: float = 0.05) -> WidthReport:
    """Extent along ``omega/|omega|`` of ``{|u| < theta}`` (default ``theta = 1 - delta0``)."""
    theta = 1.0 - delta0 if theta is None else theta
    if not 0.0 < theta < 1.0:
        raise AnalysisError("theta must lie in (0, 1)")
    nrm = lat.direction.norm
    pos = np.broadcast_to(lat.levels, lat.shape) / nrm
    u = fld.values
    sel = np.abs(u) < theta
    M = lat.B - lat.A
    above = u > -1.0 + delta0
    dist = (lat.B / nrm - float(pos[above].max())) if np.any(above) else float("inf")
    if not np.any(sel):
        return WidthReport(lat.direction.omega, M, theta, 0.0, True, distance_to_upper=dist)
    lo, hi = float(pos[sel].min()), float(pos[sel].max())
    return WidthReport(lat.direction.omega, M, theta, hi - lo, False, lo, hi, dist)


# ----------------------------------------------------------- energy scaling


@dataclass
class ScalingReport:
    s: float
    radii: list
    energies: list
    kinetic_potential: list
    slope: float
    reference_slope: float
    log_coefficient: float = float("nan")
    table: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def reference_slope(s: float, N: int) -> float:
    return N - 2 * s if s < 0.5 else N - 1.0


def lift_window(lat: LatticeQuotient, fld: Field, lo, hi) -> tuple:
    """Values of ``fld`` on the grid box ``[lo, hi]`` (grid units) of R^N.

    Points outside the band take their far-field phase value.
    """
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    K = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    t, r = lat.quotient_coords(K)
    vals = np.empty(K.shape[:-1])
    inside = (t >= lat.t_lo) & (t <= lat.t_hi)
    vals[inside] = fld.values[(t[inside] - lat.t_lo,) + tuple(x[inside] for x in r)]
    cell = tuple(np.mod(K[..., a], lat.n) for a in range(lat.N))
    below, above = t < lat.t_lo, t > lat.t_hi
    vals[below] = fld.far_low[tuple(c[below] for c in cell)]
    vals[above] = fld.far_high[tuple(c[above] for c in cell)]
    return K, vals, (t - lat.t_lo, r), inside


def _kernel_box(kspec: mdl.KernelSpec, N: int, n: int, radius_cells: int):
    """Plain and modulated kernel values on the offset box ``[-R, R]^N`` (grid units)."""
    rng = np.arange(-radius_cells, radius_cells + 1)
    D = np.stack(np.meshgrid(*([rng] * N), indexing="ij"), axis=-1)
    r = np.sqrt(np.sum(D * D, axis=-1)) / n
    with np.errstate(divide="ignore"):
        k0 = np.where((r > 0) & (r <= kspec.R_bar), kspec.a0 * r ** (-(N + 2 * kspec.s)), 0.0)
    k1 = k0 * mdl.modulation_weight(r) if kspec.eps_K else None
    return k0, k1


def ball_energy(model: mdl.ModelSpec, lat: LatticeQuotient, fld: Field, center, R: float
                ) -> mdl.EnergyBreakdown:
    """``E(u, B_R(center))`` for the lifted field, ``B_R`` a grid ball.

    The sum over all partners of a ball node is a class function and comes
    from the quotient convolution; pairs inside the ball are summed on a
    lifted window.
    """
    n, N, h = lat.n, lat.N, lat.h
    c = np.asarray(center, dtype=float) * n
    Rc = R * n
    lo = np.floor(c - Rc).astype(int)
    hi = np.ceil(c + Rc).astype(int)
    K, vals, (ti, r), inside = lift_window(lat, fld, lo, hi)
    d2 = np.sum((K - c) ** 2, axis=-1)
    ball = d2 <= Rc * Rc * (1 + 1e-12)
    if not np.all(inside[ball]):
        raise AnalysisError("ball exceeds the computed band")
    # full partner sums per class
    op = mdl.quotient_operator(model.kernel, lat)
    ext = fld.extended(op.P)
    u = fld.values
    full = u * u * op.row_sum - 2 * u * op.apply(ext) + op.apply(ext * ext)
    idx = (ti[ball],) + tuple(x[ball] for x in r)
    total_pairs = float(np.sum(full[idx]))
    # inner pairs on the window
    chi = ball.astype(float)
    w = chi * vals
    w2 = chi * vals * vals
    span = int(np.max(hi - lo))
    rad = int(min(math.floor(model.kernel.R_bar * n + 1e-9), span))
    k0, k1 = _kernel_box(model.kernel, N, n, rad)
    shape = tuple(int(a + b - 1) for a, b in zip(chi.shape, k0.shape))
    fshape = tuple(sfft.next_fast_len(s, real=True) for s in shape)
    axes = tuple(range(N))
    sl = tuple(slice(rad, rad + m) for m in chi.shape)

    def conv(kern, f):
        y = sfft.irfftn(sfft.rfftn(f, fshape, axes=axes) * sfft.rfftn(kern, fshape, axes=axes),
                        fshape, axes=axes)
        return y[sl]

    def apply(f):
        out = conv(k0, f)
        if k1 is not None:
            x1 = K[..., 0] * h
            cc, ss = np.cos(2 * np.pi * x1), np.sin(2 * np.pi * x1)
            out = out + model.kernel.eps_K * (cc * conv(k1, cc * f) - ss * conv(k1, ss * f))
        return out

    inner = float(np.sum(chi * (vals * vals * apply(chi) - 2 * vals * apply(w) + apply(w2))))
    kin = h ** (2 * N) * (total_pairs - 0.5 * inner)
    kin_inner = 0.5 * h ** (2 * N) * inner
    cell = tuple(np.mod(K[..., a], n)[ball] for a in range(N))
    ub = vals[ball]
    pot = h ** N * float(np.sum(mdl.well(model.potential, ub) * mdl.W_cell_factor(model, n, N)[cell]))
    meso = h ** N * float(np.sum(mdl.H_cell(model, n, N)[cell] * ub))
    return mdl.EnergyBreakdown(kin_inner, kin - kin_inner, pot, meso)


def energy_scaling(model: mdl.ModelSpec, lat: LatticeQuotient, fld: Field, center,
                   radii: Sequence[float], threads: int = 1) -> ScalingReport:
    """Energies ``E(u, B_R)`` and the fitted slope of ``log E`` against ``log R``."""
    radii = [float(R) for R in radii]
    if any(R < 3 for R in radii):
        raise AnalysisError("radii must be at least 3")

    def job(R):
        return ball_energy(model, lat, fld, center, R)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, radii))
    else:
        parts = [job(R) for R in radii]
    E = np.array([p.total for p in parts])
    KP = np.array([p.kinetic + p.potential for p in parts])
    slope = float(np.polyfit(np.log(radii), np.log(E), 1)[0])
    s, N = model.kernel.s, lat.N
    logc = float("nan")
    if s == 0.5:
        # E / R^{N-1} = c0 + c1 log R
        logc = float(np.polyfit(np.log(radii), E / np.asarray(radii) ** (N - 1), 1)[0])
    table = [{"R": R, "E_total": p.total, "E_kinetic": p.kinetic, "E_potential": p.potential,
              "E_meso": p.mesoscopic} for R, p in zip(radii, parts)]
    return ScalingReport(s, radii, E.tolist(), KP.tolist(), slope, reference_slope(s, N), logc, table)


def scaling_run(model: mdl.ModelSpec, phases: PurePhases, n: int = 32, half_width: float = 20.0,
                L: float = 2.0, radii=range(3, 13), opts: Optional[SolverOptions] = None,
                threads: int = 1):
    """Planar interface (direction e_1) through the origin and its ball energies."""
    N = phases.N
    direction = (1,) + (0,) * (N - 1)
    cls = make_class(model, direction, 2 * half_width, n=n, A=-half_width, L=L)
    lat = cls.lattice
    lev = np.broadcast_to(lat.levels, lat.shape)
    u0 = np.where(lev < 0, 1.0, -1.0)
    res = constrained_minimize(model, cls, phases, u0, opts)
    center = np.zeros(N)
    return res, energy_scaling(model, lat, res.field, center, list(radii), threads)


# ------------------------------------------------- unconstrained transition


def align_translate(lat_big: LatticeQuotient, fld: Field, a: int) -> Field:
    """Shift by an integer vector with ``omega.k = a`` (moves the profile up by ``a``)."""
    k = a * np.asarray(lat_big.basis.lift)
    return translate(lat_big, fld, k)


def compare_common(base: Field, other: Field, row_offset: int) -> float:
    """Sup-norm difference on the levels of ``base`` (``other`` rows shifted by ``row_offset``)."""
    T = base.values.shape[0]
    seg = other.values[row_offset:row_offset + T]
    if seg.shape != base.values.shape:
        raise AnalysisError("enlarged strip does not cover the base strip")
    return float(np.max(np.abs(seg - base.values)))


def unconstrained_check(model: mdl.ModelSpec, phases: PurePhases, direction, M: float,
                        a_values=(1, 2), n: int = 16, L: Optional[float] = None,
                        opts: Optional[SolverOptions] = None, base: Optional[MinimizerResult] = None,
                        tol: float = 1e-5) -> dict:
    """Recompute the minimal minimizer on ``[0, M+a]`` and ``[-a, M+a]`` and compare.

    The first strip shares the lower constraint with ``[0, M]`` and is
    compared node by node.  The second is compared after the integer
    translation by ``a`` that aligns its lower constraint with ``0``.
    """
    opts = opts or SolverOptions()
    cls0 = make_class(model, direction, M, n=n, L=L)
    if base is None:
        base = minimal_minimizer(model, cls0, phases, opts)
    etol = opts.energy_tol * cross_section(cls0.lattice)
    rows = []
    ok = base.converged
    for a in a_values:
        a = int(a)
        if a < 0:
            raise AnalysisError("enlargements must be nonnegative")
        cls1 = make_class(model, direction, M + a, n=n, L=L)
        # warm starts: the base profile continued by its far field
        ext1 = _extend_to(cls1.lattice, base.field, cls0.lattice)
        r1 = minimal_minimizer(model, cls1, phases, opts, extra_inits=[ext1])
        d1 = compare_common(base.field, r1.field, 0)
        cls2 = make_class(model, direction, M + 2 * a, n=n, A=-a, L=L)
        shift_rows = a * n
        ext2 = Field(cls2.lattice, _extend_to(cls2.lattice, base.field, cls0.lattice),
                     base.field.far_low, base.field.far_high)
        warm = align_translate(cls2.lattice, ext2, -a)
        r2 = minimal_minimizer(model, cls2, phases, opts, extra_inits=[warm.values])
        al = align_translate(cls2.lattice, r2.field, a)
        d2 = compare_common(base.field, al, shift_rows)
        act1 = r1.active_constraints["lower_phase"] + r1.active_constraints["upper_phase"]
        act2 = r2.active_constraints["lower_phase"] + r2.active_constraints["upper_phase"]
        dE = abs(r2.f_omega - base.f_omega)
        row = {"a": a, "sup_diff_shared_lower": d1, "sup_diff_aligned": d2,
               "active_enlarged": act1, "active_symmetric": act2,
               "energy_diff_aligned": dE, "converged": bool(r1.converged and r2.converged)}
        row["passed"] = bool(d1 <= tol and d2 <= tol and act1 == 0 and act2 == 0
                             and dE <= etol and row["converged"])
        ok = ok and row["passed"]
        rows.append(row)
    active0 = base.active_constraints["upper_phase"]
    status = "unconstrained" if active0 == 0 else "constrained"
    return {"direction": tuple(int(x) for x in cls0.lattice.direction.omega), "M": M,
            "status": status, "rows": rows, "passed": bool(ok and status == "unconstrained"),
            "tol": tol}


def _extend_to(lat_big: LatticeQuotient, fld: Field, lat_small: LatticeQuotient):
    """``fld`` placed on the levels of ``lat_big``, far field elsewhere."""
    lo_rows = lat_small.t_lo - lat_big.t_lo
    hi_rows = lat_big.t_hi - lat_small.t_hi
    parts = []
    if lo_rows > 0:
        parts.append(fld.far_low[lat_big.cell_index(lat_big.t_lo, lo_rows)])
    parts.append(fld.values)
    if hi_rows > 0:
        parts.append(fld.far_high[lat_big.cell_index(lat_small.t_hi + 1, hi_rows)])
    return np.concatenate(parts)


# ------------------------------------------------------------------ Hoelder


def holder_seminorm(lat: LatticeQuotient, fld: Field, alpha: float, subdomain=None,
                    max_dist: float = 1.0) -> float:
    """``max |u_i - u_j| / |x_i - x_j|^alpha`` over node pairs at distance ``<= max_dist``.

    The default subdomain keeps nodes at distance at least 1 from the ends of
    the computed band.
    """
    if not 0 < alpha <= 1:
        raise AnalysisError("alpha must lie in (0, 1]")
    if subdomain is None:
        cut = int(math.ceil(lat.n * lat.direction.norm))
        sub = np.zeros(lat.shape, bool)
        sub[cut:lat.shape[0] - cut] = True
    else:
        sub = np.asarray(subdomain, bool)
    if not np.any(sub):
        raise AnalysisError("empty subdomain")
    u = fld.values
    T = lat.shape[0]
    best = 0.0
    d, d2 = _offsets_within(lat.N, max_dist * lat.n)
    Uinv = lat._inverse
    for off, q in zip(d, d2):
        c = Uinv @ off
        dt, dr = int(c[0]), [int(x) for x in c[1:]]
        if abs(dt) >= T:
            continue
        v, m = u, sub
        for ax, s in enumerate(dr):
            v = np.roll(v, -s, axis=ax + 1)
            m = np.roll(m, -s, axis=ax + 1)
        # partner of node (t, r) is (t + dt, r + dr)
        if dt >= 0:
            a_sl, b_sl = slice(0, T - dt), slice(dt, T)
        else:
            a_sl, b_sl = slice(-dt, T), slice(0, T + dt)
        both = sub[a_sl] & m[b_sl]
        if not np.any(both):
            continue
        diff = np.abs(u[a_sl] - v[b_sl])[both]
        best = max(best, float(diff.max()) / (math.sqrt(q) / lat.n) ** alpha)
    return best


# ----------------------------------------------------------------- rational


def angular_error(direction, omega_real) -> float:
    a = np.asarray(direction, float)
    b = np.asarray(omega_real, float)
    return float(np.linalg.norm(a / np.linalg.norm(a) - b / np.linalg.norm(b)))


def _continued_fraction_2d(omega_real, count):
    a, b = float(omega_real[0]), float(omega_real[1])
    if a == 0.0:
        return [(0, 1 if b > 0 else -1)]
    sa, sb = (1 if a > 0 else -1), (1 if b > 0 else -1)
    x = abs(b) / abs(a)
    out = []
    h0, h1, k0, k1 = 0, 1, 1, 0
    rem = x
    for _ in range(count + 8):
        q = math.floor(rem)
        h0, h1 = h1, q * h1 + h0
        k0, k1 = k1, q * k1 + k0
        out.append((sa * k1, sb * h1))
        frac = rem - q
        if frac < 1e-12 or abs(h1 / k1 - x) < 1e-14 * max(1.0, x):
            break
        rem = 1.0 / frac
    return out


def _best_approximations(omega_real, count):
    w = np.asarray(omega_real, float)
    w = w / np.max(np.abs(w))
    out = []
    for q in range(1, 10 ** 6):
        v = np.rint(q * w).astype(int)
        if not np.any(v):
            continue
        g = math.gcd(*[int(x) for x in v])
        out.append(tuple(int(x) // g for x in v))
        if len(out) > 4 * count + 8 or angular_error(out[-1], omega_real) < 1e-14:
            break
    return out


def rational_approximation(omega_real, count: int = 4) -> list:
    """Integer directions approaching ``omega_real`` with strictly decreasing angular error."""
    w = np.asarray(omega_real, float)
    if w.ndim != 1 or not np.any(w):
        raise AnalysisError("direction must be a nonzero vector")
    cands = _continued_fraction_2d(w, count) if w.size == 2 else _best_approximations(w, count)
    out, last = [], np.inf
    for c in cands:
        err = angular_error(c, w)
        if err < last - 1e-15:
            out.append(Direction(c))
            last = err
        if len(out) == count or err < 1e-14:
            break
    return out


def window_values(lat: LatticeQuotient, fld: Field, center, radius: float) -> np.ndarray:
    """Field values on the grid points of the box ``center +- radius`` in R^N."""
    c = np.asarray(center, float) * lat.n
    lo = np.floor(c - radius * lat.n).astype(int)
    hi = np.ceil(c + radius * lat.n).astype(int)
    _, vals, _, _ = lift_window(lat, fld, lo, hi)
    return vals


def irrational_convergence(model: mdl.ModelSpec, phases: PurePhases, omega_real, count: int = 4,
                           width: float = 12.0, n: int = 8, L: Optional[float] = None,
                           center=None, radius: float = 1.5,
                           opts: Optional[SolverOptions] = None) -> dict:
    """Minimal minimizers for successive approximants compared on a fixed window.

    Each strip has Euclidean width ``width`` (``B = width |omega_j|``) so that
    the approximants describe comparable geometries.
    """
    dirs = rational_approximation(omega_real, count)
    unit = np.asarray(omega_real, float) / np.linalg.norm(omega_real)
    center = unit * 0.5 * width if center is None else np.asarray(center, float)
    wins, runs = [], []
    for d in dirs:
        cls = make_class(model, d.omega, width * d.norm, n=n, L=L)
        res = minimal_minimizer(model, cls, phases, opts)
        wins.append(window_values(cls.lattice, res.field, center, radius))
        runs.append({"direction": d.omega, "f_omega": res.f_omega, "converged": res.converged,
                     "angular_error": angular_error(d.omega, omega_real)})
    gaps = [float(np.max(np.abs(a - b))) for a, b in zip(wins, wins[1:])]
    decreasing = all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    return {"omega": [float(x) for x in omega_real], "runs": runs, "gaps": gaps,
            "decreasing": bool(decreasing), "center": center.tolist(), "radius": radius}
