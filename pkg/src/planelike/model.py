"""Energy data (kernel, double well, mesoscopic field) and discrete energies.

Discretization: a field lives on grid nodes ``x_i = h k_i``.  For a node set
``Omega`` the localized energy is

    E(u, Omega) = h^{2N} [ 1/2 sum_{i,j in Omega} + sum_{i in Omega, j not in Omega} ]
                  K(x_i, x_j) (u_i - u_j)^2  +  h^N sum_{i in Omega} (W(x_i, u_i) + H(x_i) u_i)

where ``j`` runs over every grid point of R^N (periodic images included) and
self pairs are dropped.  On a quotient band "``j in Omega``" means that the
class of ``j`` belongs to ``Omega``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

from .lattice import Field, LatticeQuotient, _offsets_within


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------- specs


@dataclass(frozen=True)
class KernelSpec:
    """``K(x,y) = a(x,y) |x-y|^{-N-2s}`` for ``|x-y| <= R_bar`` and 0 beyond.

    ``a(x,y) = a0 (1 + eps_K cos(2 pi (x_1 + y_1)) / (1 + |x-y|^2))``; it must
    stay within ``[lam, Lam]``.  Smaller ``a0`` gives thinner interfaces.
    """

    s: float = 0.5
    lam: float = 1.0
    Lam: float = 1.0
    eps_K: float = 0.0
    R_bar: float = 3.0
    a0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ModelError(f"s must lie in (0, 1), got {self.s}")
        if not 0.0 < self.lam <= self.Lam:
            raise ModelError("need 0 < lambda <= Lambda")
        if not self.a0 > 0:
            raise ModelError("kernel amplitude a0 must be positive")
        lo, hi = self.a0 * (1.0 - self.eps_K), self.a0 * (1.0 + self.eps_K)
        if self.eps_K < 0 or lo < self.lam * (1 - 1e-15) or hi > self.Lam * (1 + 1e-15):
            raise ModelError("modulation a0 (1 +- eps_K) must stay within [lambda, Lambda]")
        if not self.R_bar > 0:
            raise ModelError("truncation radius must be positive")


@dataclass(frozen=True)
class PotentialSpec:
    """``W(x, r) = w(r) (1 + eps_W p(x))``.

    ``well='quartic'`` uses ``w(r) = (1 - r^2)^2``.  ``well='w6'`` uses the
    piecewise well ``1/2 - r^2`` (``|r| <= 1/2``), ``(|r| - 1)^2`` otherwise,
    whose two wells are translates of each other.
    """

    delta0: float = 0.05
    eps_W: float = 0.1
    well: str = "quartic"

    def __post_init__(self):
        if not 0.0 < self.delta0 < 0.1:
            raise ModelError("delta0 must lie in (0, 1/10)")
        if not 0.0 <= self.eps_W < 1.0:
            raise ModelError("eps_W must lie in [0, 1)")
        if self.well not in ("quartic", "w6"):
            raise ModelError(f"unknown well {self.well!r}")


@dataclass(frozen=True)
class MesoSpec:
    """``H(x) = eta cos(2 pi x_1)``: zero average, period 1, ``sup |H| = eta``."""

    eta: float = 0.01
    shape: str = "cos"

    def __post_init__(self):
        if self.eta < 0:
            raise ModelError("eta must be nonnegative")
        if self.shape not in ("cos", "zero"):
            raise ModelError(f"unknown mesoscopic shape {self.shape!r}")


@dataclass(frozen=True)
class ModelSpec:
    kernel: KernelSpec = field(default_factory=KernelSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    meso: MesoSpec = field(default_factory=MesoSpec)

    @property
    def delta0(self) -> float:
        return self.potential.delta0

    @property
    def eta(self) -> float:
        return self.meso.eta

    @property
    def bound(self) -> float:
        return 1.0 + self.potential.delta0

    def with_(self, **kw) -> "ModelSpec":
        """Copy with flat overrides, e.g. ``model.with_(eta=0.02, s=0.25)``."""
        return ModelSpec.from_mapping({**self.to_mapping(), **kw})

    # flat key mapping used by config files
    _KEYS = {
        "s": ("kernel", "s"), "lambda": ("kernel", "lam"), "Lambda": ("kernel", "Lam"),
        "eps_K": ("kernel", "eps_K"), "R_bar": ("kernel", "R_bar"), "a0": ("kernel", "a0"),
        "delta0": ("potential", "delta0"), "eps_W": ("potential", "eps_W"),
        "well": ("potential", "well"), "eta": ("meso", "eta"), "meso_shape": ("meso", "shape"),
    }

    def to_mapping(self) -> dict:
        return {k: getattr(getattr(self, sec), attr) for k, (sec, attr) in self._KEYS.items()}

    @classmethod
    def from_mapping(cls, data) -> "ModelSpec":
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise ModelError(f"unknown model key(s): {sorted(unknown)}")
        parts = {"kernel": {}, "potential": {}, "meso": {}}
        for k, v in data.items():
            sec, attr = cls._KEYS[k]
            parts[sec][attr] = v
        return cls(KernelSpec(**parts["kernel"]), PotentialSpec(**parts["potential"]),
                   MesoSpec(**parts["meso"]))


@dataclass
class EnergyBreakdown:
    kinetic_inner: float
    kinetic_cross: float
    potential: float
    mesoscopic: float

    @property
    def kinetic(self) -> float:
        return self.kinetic_inner + self.kinetic_cross

    @property
    def total(self) -> float:
        return self.kinetic_inner + self.kinetic_cross + self.potential + self.mesoscopic

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


# ----------------------------------------------------- pointwise functions


def modulation_weight(r):
    return 1.0 / (1.0 + np.asarray(r) ** 2)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise ModelError("kernel is singular on the diagonal")
    if r > spec.R_bar:
        return 0.0
    N = x.size
    a = spec.a0 + spec.a0 * spec.eps_K * math.cos(2 * math.pi * (x[0] + y[0])) * float(modulation_weight(r))
    return a / r ** (N + 2 * spec.s)


def well(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    if spec.well == "quartic":
        t = 1.0 - r * r
        return t * t
    a = np.abs(r)
    return np.where(a <= 0.5, 0.5 - r * r, (a - 1.0) ** 2)


def well_prime(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    if spec.well == "quartic":
        return 4.0 * r * (r * r - 1.0)
    a = np.abs(r)
    return np.where(a <= 0.5, -2.0 * r, 2.0 * (a - 1.0) * np.sign(r))


def well_delta(spec: PotentialSpec, r, d):
    """``w(r + d) - w(r)``, expanded in ``d`` for the quartic to avoid cancellation."""
    if spec.well == "quartic":
        r2 = r * r
        return d * (4 * r * (r2 - 1) + d * (6 * r2 - 2 + d * (4 * r + d)))
    return well(spec, r + d) - well(spec, r)


def cell_coords(n: int, N: int):
    ax = np.arange(n) / n
    return np.meshgrid(*([ax] * N), indexing="ij")


def p_cell(n: int, N: int) -> np.ndarray:
    """Spatial modulation of W; invariant under the half shift used by the phase symmetry."""
    X = cell_coords(n, N)
    if N == 1:
        return np.cos(4 * np.pi * X[0])
    return np.cos(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1])


def q_cell(n: int, N: int, shape: str = "cos") -> np.ndarray:
    X = cell_coords(n, N)
    if shape == "zero":
        return np.zeros_like(X[0])
    return np.cos(2 * np.pi * X[0])


def H_cell(model: ModelSpec, n: int, N: int) -> np.ndarray:
    return model.meso.eta * q_cell(n, N, model.meso.shape)


def W_cell_factor(model: ModelSpec, n: int, N: int) -> np.ndarray:
    return 1.0 + model.potential.eps_W * p_cell(n, N)


def half_shift(N: int) -> tuple:
    """Grid shift (in half cells) that flips ``H`` and preserves ``W`` and ``K``."""
    return (1, 1, 0)[:N] if N >= 2 else (1,)


def psi_s(s: float, R: float) -> float:
    if not 0.0 < s < 1.0:
        raise ModelError("s must lie in (0, 1)")
    if s < 0.5:
        return R ** (1.0 - 2.0 * s)
    if s == 0.5:
        return math.log(R)
    return 1.0


def measure_potential(spec: PotentialSpec, N: int = 2, n: int = 16, samples: int = 2001) -> dict:
    """Measured structural constants: gamma(theta), the (W5) slope c and W*."""
    fac = 1.0 + spec.eps_W * p_cell(n, N).ravel()
    fmin, fmax = fac.min(), fac.max()
    r = np.linspace(-1.0, 1.0, samples)
    w = well(spec, r)
    wp = well_prime(spec, r)
    thetas = np.linspace(0.0, 0.99, 100)
    gamma = [float(fmin * w[np.abs(r) <= th + 1e-15].min()) for th in thetas]
    rr = np.linspace(spec.delta0, 1.0, samples)
    c_plus = well_prime(spec, 1.0 + rr).min() * fmin
    c_minus = (-well_prime(spec, -1.0 - rr)).min() * fmin
    return {
        "theta": thetas.tolist(),
        "gamma": gamma,
        "c_W5": float(min(c_plus, c_minus)),
        "W_star": float(fmax ** 2 * np.max(w * np.abs(wp))),
    }


# ------------------------------------------------------- kernel operators


class _Convolver:
    """Sum_j K(x_i, x_j) f_j on a (partly) periodic grid via FFT.

    Axis 0 is linear (strip levels, source padded by ``P`` on each side) or
    periodic (unit cell); remaining axes are periodic.  ``G0``/``G1`` are the
    image-folded kernel tables for the plain and modulated parts.
    """

    def __init__(self, G0, G1, eps, periodic0, src_shape, c_src=None, s_src=None,
                 c_tgt=None, s_tgt=None):
        self.periodic0 = periodic0
        self.src_shape = src_shape
        self.eps = eps
        if periodic0:
            self.fshape = src_shape
            self.P = 0
        else:
            self.P = (G0.shape[0] - 1) // 2
            self.fshape = (sfft.next_fast_len(src_shape[0], real=True),) + tuple(src_shape[1:])
        axes = tuple(range(len(self.fshape)))
        self.axes = axes
        self.K0 = sfft.rfftn(self._embed(G0), s=self.fshape, axes=axes)
        self.K1 = None
        if eps != 0.0:
            self.K1 = sfft.rfftn(self._embed(G1), s=self.fshape, axes=axes)
            self.c_src, self.s_src, self.c_tgt, self.s_tgt = c_src, s_src, c_tgt, s_tgt

    def _embed(self, G):
        if self.periodic0:
            return G
        out = np.zeros(self.fshape)
        out[:G.shape[0]] = G
        return out

    def _conv(self, Khat, f):
        y = sfft.irfftn(sfft.rfftn(f, s=self.fshape, axes=self.axes) * Khat,
                        s=self.fshape, axes=self.axes)
        if self.periodic0:
            return y
        T = self.src_shape[0] - 2 * self.P
        return y[2 * self.P:2 * self.P + T]

    def __call__(self, f):
        out = self._conv(self.K0, f)
        if self.K1 is not None:
            out = out + self.eps * (self.c_tgt * self._conv(self.K1, self.c_src * f)
                                    - self.s_tgt * self._conv(self.K1, self.s_src * f))
        return out


def _image_tables(kspec: KernelSpec, N: int, n: int, to_index, table_shape):
    """Fold kernel values over all grid offsets ``|d| h <= R_bar`` into a table."""
    d, d2 = _offsets_within(N, kspec.R_bar * n)
    r = np.sqrt(d2) / n
    k0 = kspec.a0 * r ** (-(N + 2 * kspec.s))
    flat = np.ravel_multi_index(to_index(d), table_shape)
    size = int(np.prod(table_shape))
    G0 = np.bincount(flat, weights=k0, minlength=size).reshape(table_shape)
    G1 = None
    if kspec.eps_K != 0.0:
        G1 = np.bincount(flat, weights=k0 * modulation_weight(r), minlength=size).reshape(table_shape)
    return G0, G1


class QuotientOperator:
    """Kernel machinery for one (kernel, quotient band) pair."""

    def __init__(self, kspec: KernelSpec, lat: LatticeQuotient):
        self.kspec = kspec
        self.lat = lat
        N, n = lat.N, lat.n
        self.P = int(math.floor(kspec.R_bar * n * lat.direction.norm + 1e-9))
        P = self.P
        periods = lat.periods
        Uinv = lat._inverse

        def to_index(d):
            c = d @ Uinv.T
            idx = [c[:, 0] + P] + [np.mod(c[:, i + 1], p) for i, p in enumerate(periods)]
            return tuple(idx)

        self.table_shape = (2 * P + 1,) + periods
        self.G0, self.G1 = _image_tables(kspec, N, n, to_index, self.table_shape)
        T = lat.shape[0]
        self.src_shape = (T + 2 * P,) + periods
        ci = lat.cell_index(lat.t_lo - P, T + 2 * P)
        x1 = ci[0] / n
        c_src, s_src = np.cos(2 * np.pi * x1), np.sin(2 * np.pi * x1)
        self.c_tgt, self.s_tgt = c_src[P:P + T], s_src[P:P + T]
        self.conv = _Convolver(self.G0, self.G1, kspec.eps_K, False, self.src_shape,
                               c_src, s_src, self.c_tgt, self.s_tgt)
        self._row_sum = None
        nz = np.argwhere(self.G0 != 0)
        self.offsets = [tuple(int(v) for v in o) for o in nz]
        self._groups = None

    @property
    def row_sum(self) -> np.ndarray:
        """``S_i = sum_j K(x_i, x_j)`` over all grid points ``j != i``."""
        if self._row_sum is None:
            self._row_sum = self.conv(np.ones(self.src_shape))
        return self._row_sum

    def apply(self, ext):
        return self.conv(ext)

    def pair_weights(self, off):
        """Kernel weight array for the pair ``(i, i - Delta)`` over band nodes."""
        g0 = self.G0[off]
        if self.G1 is None:
            return g0
        ext_c, ext_s = self.conv.c_src, self.conv.s_src
        cj = self._shift(ext_c, off)
        sj = self._shift(ext_s, off)
        return g0 + self.kspec.eps_K * self.G1[off] * (self.c_tgt * cj - self.s_tgt * sj)

    @property
    def groups(self) -> tuple:
        """All offsets as ``(dt, cols, g0, g1)``; ``cols[j, r]`` is the flat transverse index of
        ``r - Delta_r`` for offset ``j``."""
        if self._groups is None:
            periods = tuple(self.lat.periods)
            R = int(np.prod(periods)) if periods else 1
            offs = np.array(self.offsets).reshape(len(self.offsets), -1)
            if periods:
                grid = np.indices(periods).reshape(len(periods), 1, R)
                src = (grid - offs[:, 1:].T[:, :, None]) % np.array(periods)[:, None, None]
                cols = np.ravel_multi_index(tuple(src), periods)
            else:
                cols = np.zeros((len(offs), 1), np.intp)
            idx = tuple(offs.T)
            g1 = None if self.G1 is None else self.G1[idx]
            self._groups = (offs[:, 0] - self.P, cols, self.G0[idx], g1)
            self._blocks = {}
        return self._groups

    def _block_index(self, a: int, b: int, cache: bool):
        key = (a, b)
        if key in self._blocks:
            return self._blocks[key]
        dt, cols = self.groups[0][a:b], self.groups[1][a:b]
        T = self.lat.shape[0]
        R = cols.shape[1]
        src_rows = np.arange(T)[:, None] + self.P - dt[None, :]
        flat = src_rows[:, None, :] * R + cols.T[None, :, :]
        inb = (src_rows >= self.P) & (src_rows < self.P + T)
        if cache:
            self._blocks[key] = (flat, inb)
        return flat, inb

    def pair_blocks(self, *exts, chunk: int = 1 << 21):
        """Yield ``(inb, w, partners...)`` over blocks of offsets, arrays shaped ``(T, R, S)``.

        Band node ``(t, r)`` is paired with ``(t - dt, r - Delta_r)`` for each of
        the ``S`` offsets of a block; ``inb`` (shape ``(T, S)``) flags partners
        inside the band and ``exts`` are padded source arrays.
        """
        dt, cols, g0, g1 = self.groups
        T = self.lat.shape[0]
        R = cols.shape[1]
        step = max(1, chunk // (T * R))
        cache = len(g0) * T * R <= (1 << 22)
        flats = [e.reshape(-1) for e in exts]
        for a in range(0, len(g0), step):
            b = min(len(g0), a + step)
            flat, inb = self._block_index(a, b, cache)
            parts = [f[flat] for f in flats]
            w = g0[a:b][None, None, :]
            if g1 is not None:
                cs = self.conv.c_src.reshape(-1)[flat]
                ss = self.conv.s_src.reshape(-1)[flat]
                ct = self.c_tgt.reshape(T, R, 1)
                st = self.s_tgt.reshape(T, R, 1)
                w = w + self.kspec.eps_K * g1[a:b][None, None, :] * (ct * cs - st * ss)
            yield (inb, w, *parts)

    def _shift(self, ext, off):
        """``ext`` evaluated at ``i - Delta`` for every band node ``i``."""
        dt = off[0] - self.P
        T = self.lat.shape[0]
        out = ext[self.P - dt:self.P - dt + T]
        for ax, s in enumerate(off[1:]):
            if s:
                out = np.roll(out, s, axis=ax + 1)
        return out


_OP_CACHE: dict = {}


def quotient_operator(kspec: KernelSpec, lat: LatticeQuotient) -> QuotientOperator:
    key = (kspec, lat.key)
    op = _OP_CACHE.get(key)
    if op is None:
        if len(_OP_CACHE) > 16:
            _OP_CACHE.clear()
        op = _OP_CACHE[key] = QuotientOperator(kspec, lat)
    return op


class CellOperator:
    """Kernel machinery on the unit torus ``R^N / Z^N`` at resolution ``n``."""

    def __init__(self, kspec: KernelSpec, n: int, N: int):
        self.kspec, self.n, self.N = kspec, n, N
        shape = (n,) * N
        self.shape = shape
        self.G0, self.G1 = _image_tables(kspec, N, n, lambda d: tuple(np.mod(d.T, n)), shape)
        x1 = cell_coords(n, N)[0]
        c, s = np.cos(2 * np.pi * x1), np.sin(2 * np.pi * x1)
        self.c, self.s = c, s
        self.conv = _Convolver(self.G0, self.G1, kspec.eps_K, True, shape, c, s, c, s)
        self.row_sum = self.conv(np.ones(shape))
        self.offsets = [tuple(int(v) for v in o) for o in np.argwhere(self.G0 != 0)
                        if any(o)]

    def pair_weights(self, off):
        g0 = self.G0[off]
        if self.G1 is None:
            return g0
        cj = np.roll(self.c, off, axis=tuple(range(self.N)))
        sj = np.roll(self.s, off, axis=tuple(range(self.N)))
        return g0 + self.kspec.eps_K * self.G1[off] * (self.c * cj - self.s * sj)


_CELL_CACHE: dict = {}


def cell_operator(kspec: KernelSpec, n: int, N: int) -> CellOperator:
    key = (kspec, n, N)
    op = _CELL_CACHE.get(key)
    if op is None:
        op = _CELL_CACHE[key] = CellOperator(kspec, n, N)
    return op


# ------------------------------------------------------ energies on a band


class MediumOnBand:
    """``W`` modulation and ``H`` sampled on band nodes of a quotient."""

    def __init__(self, model: ModelSpec, lat: LatticeQuotient):
        ci = lat.cell_index(lat.t_lo, lat.shape[0])
        self.wfac = W_cell_factor(model, lat.n, lat.N)[ci]
        self.H = H_cell(model, lat.n, lat.N)[ci]


def _check_field(model: ModelSpec, fld: Field):
    if np.max(np.abs(fld.values)) > model.bound * (1 + 1e-12):
        raise ModelError("field exceeds the admissible bound 1 + delta0")


def _work(op: QuotientOperator) -> int:
    return len(op.offsets) * op.lat.size


def energy_total(model: ModelSpec, lat: LatticeQuotient, fld: Field, region=None,
                 method: str = "auto") -> EnergyBreakdown:
    """Localized energy ``E(u, Omega)`` on the quotient.

    ``region`` is a boolean mask over the band (default: the whole band).
    ``method`` selects direct pair summation (exact differences, fixed order)
    or FFT convolution; ``auto`` picks direct for small problems.
    """
    _check_field(model, fld)
    if fld.lattice != lat:
        raise ModelError("field is defined on a different lattice")
    mask = np.ones(lat.shape, bool) if region is None else np.asarray(region, bool)
    if mask.shape != lat.shape:
        raise ModelError("region is not contained in the lattice")
    op = quotient_operator(model.kernel, lat)
    if method == "auto":
        method = "direct" if _work(op) <= 3e7 else "fft"
    h, N = lat.h, lat.N
    u = fld.values
    ext = fld.extended(op.P)
    med = MediumOnBand(model, lat)
    if method == "direct":
        T = lat.shape[0]
        u2 = u.reshape(T, -1, 1)
        inner = cross = 0.0
        if region is None:
            for inb, w, pj in op.pair_blocks(ext):
                d = u2 - pj
                d *= d
                d *= w
                rows = d.sum(axis=1)
                inner += float(rows[inb].sum())
                cross += float(rows[~inb].sum())
        else:
            mext = np.zeros(op.src_shape, bool)
            mext[op.P:op.P + T] = mask
            m2 = mask.reshape(T, -1, 1)
            for _, w, pj, mj in op.pair_blocks(ext, mext):
                d = u2 - pj
                d *= d
                d *= w
                sel = m2 & mj
                inner += float(d[sel].sum())
                sel = m2 & ~mj
                cross += float(d[sel].sum())
        inner *= 0.5
    elif method == "fft":
        S = op.row_sum
        full = u * u * S - 2 * u * op.apply(ext) + op.apply(ext * ext)
        chi = np.zeros(op.src_shape)
        chi[op.P:op.P + lat.shape[0]] = mask
        inn = u * u * op.apply(chi) - 2 * u * op.apply(chi * ext) + op.apply(chi * ext * ext)
        inner = 0.5 * float(np.sum(inn[mask]))
        cross = float(np.sum(full[mask])) - 2 * inner
    else:
        raise ModelError(f"unknown method {method!r}")
    h2N = h ** (2 * N)
    pot = h ** N * float(np.sum((well(model.potential, u) * med.wfac)[mask]))
    meso = h ** N * float(np.sum((med.H * u)[mask]))
    return EnergyBreakdown(h2N * inner, h2N * cross, pot, meso)


def plus_extension(lat: LatticeQuotient, fld: Field) -> Field:
    """The pure phase ``u_+`` on the band (far field below and above set to ``u_+``)."""
    if fld.far_low is None:
        raise ModelError("missing pure phase u_+")
    ci = lat.cell_index(lat.t_lo, lat.shape[0])
    return Field(lat, fld.far_low[ci].copy(), fld.far_low, fld.far_low)


def energy_renormalized(model: ModelSpec, lat: LatticeQuotient, fld: Field,
                        method: str = "auto") -> float:
    """``F_omega(u) = E(u, band) - E(u_+, band)`` as one fused sum of differences.

    Both energies use the same pair set, so the frozen far field below the band
    cancels term by term and ``F_omega(u_+) = 0`` exactly.
    """
    _check_field(model, fld)
    p = plus_extension(lat, fld)
    op = quotient_operator(model.kernel, lat)
    if method == "auto":
        method = "direct" if _work(op) <= 3e7 else "fft"
    h, N = lat.h, lat.N
    med = MediumOnBand(model, lat)
    u, pv = fld.values, p.values
    if method == "direct":
        ue, pe = fld.extended(op.P), p.extended(op.P)
        T = lat.shape[0]
        kin = 0.0
        u2, p2 = u.reshape(T, -1, 1), pv.reshape(T, -1, 1)
        for inb, w, uj, pj in op.pair_blocks(ue, pe):
            du = u2 - uj
            dp = p2 - pj
            term = du - dp
            du += dp
            term *= du
            term *= w
            kin += float(np.sum(term.sum(axis=1) * np.where(inb, 0.5, 1.0)))
    else:
        ku = energy_total(model, lat, fld, method="fft")
        kp = energy_total(model, lat, p, method="fft")
        kin = (ku.kinetic - kp.kinetic) / h ** (2 * N)
    pot = np.sum(well_delta(model.potential, pv, u - pv) * med.wfac + med.H * (u - pv))
    return h ** (2 * N) * kin + h ** N * float(pot)


def kinetic_gradient(model: ModelSpec, lat: LatticeQuotient, fld: Field) -> np.ndarray:
    op = quotient_operator(model.kernel, lat)
    ext = fld.extended(op.P)
    return 2 * lat.h ** (2 * lat.N) * (op.row_sum * fld.values - op.apply(ext))


def energy_gradient(model: ModelSpec, lat: LatticeQuotient, fld: Field) -> np.ndarray:
    """Gradient of ``E(u, band)`` (equivalently of ``F_omega``) w.r.t. band values."""
    _check_field(model, fld)
    med = MediumOnBand(model, lat)
    h, N = lat.h, lat.N
    g = kinetic_gradient(model, lat, fld)
    return g + h ** N * (well_prime(model.potential, fld.values) * med.wfac + med.H)


def submodular_combine(u: Field, v: Field):
    if u.values.shape != v.values.shape or u.lattice != v.lattice:
        raise ModelError("fields live on different lattices")
    return (u.copy(np.minimum(u.values, v.values)), u.copy(np.maximum(u.values, v.values)))


def kinetic_between(model: ModelSpec, lat: LatticeQuotient, fld: Field, U, V) -> float:
    """``K(u; U; V) = 1/2 sum_{i in U} sum_{j in V} K_ij (u_i - u_j)^2`` (band node sets)."""
    op = quotient_operator(model.kernel, lat)
    U = np.asarray(U, bool)
    Vext = np.zeros(op.src_shape, bool)
    Vext[op.P:op.P + lat.shape[0]] = V
    ext = fld.extended(op.P) if fld.has_far_field else np.pad(
        fld.values, [(op.P, op.P)] + [(0, 0)] * (lat.N - 1))
    T = lat.shape[0]
    u2, U2 = fld.values.reshape(T, -1, 1), U.reshape(T, -1, 1)
    total = 0.0
    for _, w, pj, vj in op.pair_blocks(ext, Vext):
        d = u2 - pj
        d *= d
        d *= w
        total += float(d[U2 & vj].sum())
    return 0.5 * lat.h ** (2 * lat.N) * total


def potential_part(model: ModelSpec, lat: LatticeQuotient, fld: Field, U) -> float:
    """``P(u; U) = h^N sum_{i in U} (W(x_i, u_i) + H(x_i) u_i)``."""
    med = MediumOnBand(model, lat)
    u = fld.values
    vals = well(model.potential, u) * med.wfac + med.H * u
    return lat.h ** lat.N * float(np.sum(vals[np.asarray(U, bool)]))


# ------------------------------------------------------ energies on a cell


def cell_energy(model: ModelSpec, n: int, N: int, u: np.ndarray) -> EnergyBreakdown:
    """``E(u, Q)`` for a Q-periodic field: every partner ``j`` is an image of Q.

    All kinetic pairs are therefore inner pairs (``x in Q, y in R^N`` with
    weight 1/2); the cross term is reported as zero.
    """
    u = np.asarray(u, dtype=float)
    if np.max(np.abs(u)) > model.bound * (1 + 1e-12):
        raise ModelError("field exceeds the admissible bound 1 + delta0")
    op = cell_operator(model.kernel, n, N)
    axes = tuple(range(N))
    kin = 0.0
    for off in op.offsets:
        kin += float(np.sum(op.pair_weights(off) * (u - np.roll(u, off, axis=axes)) ** 2))
    h = 1.0 / n
    pot = float(np.sum(well(model.potential, u) * W_cell_factor(model, n, N)))
    meso = float(np.sum(H_cell(model, n, N) * u))
    return EnergyBreakdown(0.5 * h ** (2 * N) * kin, 0.0, h ** N * pot, h ** N * meso)


def cell_gradient(model: ModelSpec, n: int, N: int, u: np.ndarray) -> np.ndarray:
    op = cell_operator(model.kernel, n, N)
    h = 1.0 / n
    g = 2 * h ** (2 * N) * (op.row_sum * u - op.conv(u))
    return g + h ** N * (well_prime(model.potential, u) * W_cell_factor(model, n, N)
                         + H_cell(model, n, N))


# ------------------------------------------------- explicit pair table (oracle)


class PairTable:
    """Dense quadratic form of ``E(., band)`` for small quotients.

    Built by visiting every grid point within ``R_bar`` of every band node and
    evaluating :func:`kernel_eval` pointwise, independently of the folded
    tables used elsewhere.  ``energy`` accepts a batch of value vectors.
    """

    def __init__(self, model: ModelSpec, lat: LatticeQuotient, far_low, far_high):
        n, N, h = lat.n, lat.N, lat.h
        size = lat.size
        Kin = np.zeros((size, size))
        a = np.zeros(size)
        b = np.zeros(size)
        c = 0.0
        d, _ = _offsets_within(N, model.kernel.R_bar * n)
        kgrid = lat.node_grid_index.reshape(size, N)
        for i in range(size):
            x = kgrid[i] * h
            for off in d:
                y = kgrid[i] + off
                kij = kernel_eval(model.kernel, x, y * h)
                if kij == 0.0:
                    continue
                t, r = lat.quotient_coords(y)
                if lat.t_lo <= t <= lat.t_hi:
                    j = int(lat.flat_index(t, r))
                    Kin[i, j] += kij
                else:
                    phase = far_low if t < lat.t_lo else far_high
                    val = phase[tuple(np.mod(y, n))]
                    a[i] += kij
                    b[i] += kij * val
                    c += kij * val * val
        self.h2N, self.hN = h ** (2 * N), h ** N
        self.Kin, self.a, self.b, self.c = Kin, a, b, c
        ci = lat.cell_index(lat.t_lo, lat.shape[0])
        self.wfac = W_cell_factor(model, n, N)[ci].ravel()
        self.H = H_cell(model, n, N)[ci].ravel()
        self.plus = far_low[ci].ravel()
        self.pot = model.potential

    def energy(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=float))
        rows = self.Kin.sum(axis=1)
        # 1/2 sum_ij K_ij (v_i - v_j)^2 = sum_i rows_i v_i^2 - v.K.v for symmetric K
        inner = (V * V) @ rows - np.einsum("bi,ij,bj->b", V, self.Kin, V)
        cross = (V * V) @ self.a - 2 * V @ self.b + self.c
        kin = inner + cross
        loc = (well(self.pot, V) * self.wfac + self.H * V).sum(axis=1)
        return self.h2N * kin + self.hN * loc


def pair_table(model: ModelSpec, lat: LatticeQuotient, far_low, far_high) -> PairTable:
    return PairTable(model, lat, far_low, far_high)
