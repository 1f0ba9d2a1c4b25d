"""Quotient geometry for integer directions.

A direction ``omega`` in Z^N (primitive) defines the equivalence
``x ~ y  <=>  y - x = k in Z^N with omega . k = 0``.  We discretize the
quotient on the grid ``h Z^N`` (``h = 1/n``) using a unimodular integer
basis ``[v, z_1, ..., z_{N-1}]`` with ``omega . v = 1`` and
``omega . z_i = 0``.  A grid point ``k`` then has coordinates
``(t, r_1, ..., r_{N-1})`` with ``t = omega . k`` (the level, so that
``omega . x = t h``) and ``r`` its coordinates along the ``z_i``.  The
relation ``~_m`` identifies ``r_i`` modulo ``n m_i``; field arrays are
therefore shaped ``(T, n m_1, ..., n m_{N-1})`` with the first axis running
over the levels of the computational band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np


class LatticeError(ValueError):
    """Raised for invalid directions, grids or translations."""


@dataclass(frozen=True)
class Direction:
    omega: tuple

    def __post_init__(self):
        om = tuple(int(c) for c in self.omega)
        if len(om) == 0 or all(c == 0 for c in om):
            raise LatticeError("direction must be a nonzero integer vector")
        if math.gcd(*om) != 1:
            raise LatticeError(f"direction {om} is not primitive (gcd != 1)")
        object.__setattr__(self, "omega", om)

    @property
    def dim(self) -> int:
        return len(self.omega)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.omega))

    @property
    def unit(self) -> np.ndarray:
        return np.asarray(self.omega, dtype=float) / self.norm

    @classmethod
    def from_rational(cls, vec) -> "Direction":
        """Clear denominators and common factors of a rational vector."""
        from fractions import Fraction

        fr = [Fraction(x).limit_denominator(10**9) for x in vec]
        den = math.lcm(*(f.denominator for f in fr))
        ints = [int(f * den) for f in fr]
        g = math.gcd(*ints)
        if g == 0:
            raise LatticeError("direction must be nonzero")
        return cls(tuple(i // g for i in ints))


def _unimodular_completion(omega):
    """Return an integer unimodular U with omega @ U = (1, 0, ..., 0)."""
    N = len(omega)
    a = list(omega)
    U = np.eye(N, dtype=np.int64)
    # Euclid on the entries of a via column operations
    while sum(1 for x in a if x != 0) > 1:
        nz = [i for i in range(N) if a[i] != 0]
        p = min(nz, key=lambda i: abs(a[i]))
        for j in nz:
            if j != p:
                q = a[j] // a[p]
                a[j] -= q * a[p]
                U[:, j] -= q * U[:, p]
    p = next(i for i in range(N) if a[i] != 0)
    if a[p] < 0:
        a[p] = -a[p]
        U[:, p] *= -1
    if p != 0:
        U[:, [0, p]] = U[:, [p, 0]]
    return U


def _canonical_sign(z):
    nz = np.flatnonzero(z)
    return -z if z[nz[0]] < 0 else z


def _reduce_kernel_basis(Z):
    """Lagrange/LLL-style size reduction, then canonical signs and order."""
    Z = [np.array(z, dtype=np.int64) for z in Z]
    changed = True
    while changed and len(Z) > 1:
        changed = False
        Z.sort(key=lambda z: (int(z @ z), tuple(_canonical_sign(z))))
        for i in range(len(Z)):
            for j in range(len(Z)):
                if i == j:
                    continue
                q = int(round((Z[i] @ Z[j]) / (Z[j] @ Z[j])))
                if q != 0:
                    cand = Z[i] - q * Z[j]
                    if cand @ cand < Z[i] @ Z[i]:
                        Z[i] = cand
                        changed = True
    Z = [_canonical_sign(z) for z in Z]
    Z.sort(key=lambda z: (int(z @ z), tuple(-z)))
    return Z


@dataclass(frozen=True)
class SublatticeBasis:
    """Integer basis of ``{k in Z^N : omega . k = 0}`` plus a lift ``v``."""

    vectors: tuple  # tuple of tuples, length N-1
    lift: tuple  # v with omega . v = 1

    @classmethod
    def for_direction(cls, direction: Direction) -> "SublatticeBasis":
        om = np.asarray(direction.omega, dtype=np.int64)
        U = _unimodular_completion(direction.omega)
        Z = _reduce_kernel_basis([U[:, j] for j in range(1, len(om))])
        v = U[:, 0].copy()
        # shorten v modulo the kernel lattice (keeps omega . v = 1)
        for _ in range(4):
            for z in Z:
                q = int(round((v @ z) / (z @ z)))
                v = v - q * z
        basis = cls(tuple(tuple(int(c) for c in z) for z in Z), tuple(int(c) for c in v))
        basis.check(direction)
        return basis

    @property
    def matrix(self) -> np.ndarray:
        """Columns ``[v, z_1, ..., z_{N-1}]``."""
        cols = [self.lift] + list(self.vectors)
        return np.array(cols, dtype=np.int64).T

    def check(self, direction: Direction):
        om = np.asarray(direction.omega)
        U = self.matrix
        if int(om @ U[:, 0]) != 1 or any(int(om @ U[:, j]) != 0 for j in range(1, U.shape[1])):
            raise LatticeError("basis is not adapted to the direction")
        if abs(round(np.linalg.det(U))) != 1:
            raise LatticeError("basis is not unimodular")


@dataclass(frozen=True, eq=False)
class LatticeQuotient:
    """Discretized fundamental domain of ``~_m`` restricted to a band of levels.

    The band covers ``omega . x in [A - L |omega|, B + L |omega|]``, i.e. a
    Euclidean margin ``L`` on each side of the strip ``S^{A,B}``.  Nodes
    outside the band carry frozen far-field values.
    """

    direction: Direction
    basis: SublatticeBasis
    m: tuple
    n: int
    A: float
    B: float
    L: float

    @property
    def N(self) -> int:
        return self.direction.dim

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def key(self):
        return (self.direction.omega, self.m, self.n, float(self.A), float(self.B), float(self.L))

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, LatticeQuotient) and self.key == other.key

    @cached_property
    def t_lo(self) -> int:
        lo = (self.A - self.L * self.direction.norm) * self.n
        return int(math.ceil(lo - 1e-9))

    @cached_property
    def t_hi(self) -> int:
        hi = (self.B + self.L * self.direction.norm) * self.n
        return int(math.floor(hi + 1e-9))

    @property
    def periods(self) -> tuple:
        return tuple(self.n * mi for mi in self.m)

    @property
    def shape(self) -> tuple:
        return (self.t_hi - self.t_lo + 1,) + self.periods

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def _inverse(self) -> np.ndarray:
        U = self.basis.matrix
        Uinv = np.rint(np.linalg.inv(U)).astype(np.int64)
        assert np.array_equal(Uinv @ U, np.eye(self.N, dtype=np.int64))
        return Uinv

    # -- coordinate maps -------------------------------------------------

    def grid_index(self, t, r) -> np.ndarray:
        """Grid integer point ``k`` (x = k h) of quotient coordinates ``(t, r)``."""
        t = np.asarray(t, dtype=np.int64)
        U = self.basis.matrix
        k = t[..., None] * U[:, 0]
        for i in range(self.N - 1):
            k = k + np.asarray(r[i], dtype=np.int64)[..., None] * U[:, i + 1]
        return k

    def quotient_coords(self, k):
        """Inverse of :meth:`grid_index`; ``r`` is reduced modulo the periods."""
        k = np.asarray(k, dtype=np.int64)
        c = k @ self._inverse.T
        t = c[..., 0]
        r = tuple(np.mod(c[..., i + 1], p) for i, p in enumerate(self.periods))
        return t, r

    def level_coords(self, t_first: int, count: int):
        """Coordinate arrays ``(t, r_1, ...)`` for ``count`` levels starting at ``t_first``."""
        axes = [np.arange(t_first, t_first + count)] + [np.arange(p) for p in self.periods]
        return np.meshgrid(*axes, indexing="ij")

    def cell_index(self, t_first: int, count: int) -> tuple:
        """Unit-cell grid index (``k mod n`` per axis) for a range of levels."""
        coords = self.level_coords(t_first, count)
        k = self.grid_index(coords[0], coords[1:])
        return tuple(np.mod(k[..., a], self.n) for a in range(self.N))

    @cached_property
    def node_grid_index(self) -> np.ndarray:
        coords = self.level_coords(self.t_lo, self.shape[0])
        return self.grid_index(coords[0], coords[1:])

    @cached_property
    def positions(self) -> np.ndarray:
        """Node positions in R^N (representatives in the fundamental domain)."""
        return self.node_grid_index * self.h

    @cached_property
    def levels(self) -> np.ndarray:
        """``omega . x`` at every node, broadcastable to :attr:`shape`."""
        t = np.arange(self.t_lo, self.t_hi + 1) * self.h
        return t.reshape((-1,) + (1,) * (self.N - 1))

    def flat_index(self, t, r) -> np.ndarray:
        return np.ravel_multi_index((np.asarray(t) - self.t_lo,) + tuple(r), self.shape)

    def unflat(self, idx):
        coords = np.unravel_index(idx, self.shape)
        return coords[0] + self.t_lo, coords[1:]

    def translation_shift(self, k) -> tuple:
        """Index shift ``(dt, dr)`` of the translation by the integer vector ``k``."""
        k = np.asarray(k, dtype=np.int64)
        if k.shape != (self.N,):
            raise LatticeError(f"translation must have length {self.N}")
        c = self._inverse @ (self.n * k)
        return int(c[0]), tuple(int(x) for x in c[1:])


def build_quotient(direction, m=None, n=16, A=0.0, B=20.0, L=3.0) -> LatticeQuotient:
    """Build the discretized quotient for ``direction`` with strip ``[A, B]``.

    ``A`` and ``B`` are in units of ``omega . x``; the margin ``L`` is a
    Euclidean length and should be at least the kernel truncation radius.
    """
    if not isinstance(direction, Direction):
        direction = Direction(tuple(direction))
    N = direction.dim
    if N not in (1, 2, 3):
        raise LatticeError("only N in {1, 2, 3} is supported")
    m = tuple(int(x) for x in (m if m is not None else (1,) * (N - 1)))
    if len(m) != N - 1 or any(x < 1 for x in m):
        raise LatticeError(f"period multipliers must be {N - 1} positive integers")
    if int(n) != n or n < 2:
        raise LatticeError("grid resolution n must be an integer >= 2")
    if not B > A:
        raise LatticeError("empty strip: need A < B")
    if L < 0:
        raise LatticeError("margin L must be nonnegative")
    basis = SublatticeBasis.for_direction(direction)
    return LatticeQuotient(direction, basis, m, int(n), float(A), float(B), float(L))


@dataclass(eq=False)
class Field:
    """Grid values on a quotient band with far-field phase rule.

    ``far_low`` (used below the band) and ``far_high`` (above) are unit-cell
    arrays of shape ``(n,)*N`` holding the pure phases ``u_+`` and ``u_-``.
    """

    lattice: LatticeQuotient
    values: np.ndarray
    far_low: Optional[np.ndarray] = None
    far_high: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.lattice.shape:
            raise LatticeError(
                f"field shape {self.values.shape} != lattice shape {self.lattice.shape}")

    def copy(self, values=None) -> "Field":
        vals = self.values.copy() if values is None else values
        return Field(self.lattice, vals, self.far_low, self.far_high)

    @property
    def has_far_field(self) -> bool:
        return self.far_low is not None and self.far_high is not None

    def extended(self, pad: int) -> np.ndarray:
        """Values on ``pad`` extra levels below and above the band (far field)."""
        lat = self.lattice
        if pad == 0:
            return self.values.copy()
        if not self.has_far_field:
            raise LatticeError("field has no far-field rule")
        T = lat.shape[0]
        out = np.empty((T + 2 * pad,) + lat.periods)
        out[pad:pad + T] = self.values
        out[:pad] = self.far_low[lat.cell_index(lat.t_lo - pad, pad)]
        out[pad + T:] = self.far_high[lat.cell_index(lat.t_hi + 1, pad)]
        return out


def translate(lattice: LatticeQuotient, fld: Field, k) -> Field:
    """Return ``tau_k u`` with ``tau_k u(x) = u(x - k)``.

    Shifts with ``omega . k = 0`` permute values within the quotient; other
    shifts move the profile along the strip axis and fill from the far field.
    """
    dt, dr = lattice.translation_shift(k)
    vals = fld.values
    for ax, s in enumerate(dr):
        vals = np.roll(vals, s, axis=ax + 1)
    if dt == 0:
        return fld.copy(values=vals.copy())
    if not fld.has_far_field:
        raise LatticeError("shift along the strip axis needs a far-field rule")
    ext = fld.copy(values=vals).extended(abs(dt))
    T = lattice.shape[0]
    start = abs(dt) - dt
    return fld.copy(values=ext[start:start + T].copy())


def _offsets_within(N: int, radius_cells: float):
    """Integer vectors d with 0 < |d| <= radius_cells, in lexicographic order."""
    R = int(math.floor(radius_cells + 1e-9))
    rng = np.arange(-R, R + 1)
    grids = np.meshgrid(*([rng] * N), indexing="ij")
    d = np.stack([g.ravel() for g in grids], axis=-1)
    d2 = np.sum(d * d, axis=1)
    keep = (d2 > 0) & (d2 <= radius_cells ** 2 * (1 + 1e-12))
    return d[keep], d2[keep]


def neighbors_within(lattice: LatticeQuotient, node: int, R: float):
    """All band nodes within distance ``R`` of ``node``, periodic images included.

    Returns ``(index, displacement, squared_distance)`` triples; a node can
    appear several times through distinct images.  Far-field points outside
    the band are not listed.
    """
    if R > lattice.L + 1e-12:
        raise LatticeError(f"radius {R} exceeds the margin L={lattice.L}")
    d, d2 = _offsets_within(lattice.N, R * lattice.n)
    t0, r0 = lattice.unflat(node)
    k0 = lattice.grid_index(np.asarray(t0), [np.asarray(x) for x in r0])
    t, r = lattice.quotient_coords(k0 + d)
    inside = (t >= lattice.t_lo) & (t <= lattice.t_hi)
    idx = lattice.flat_index(t[inside], tuple(x[inside] for x in r))
    disp = d[inside] * lattice.h
    dist2 = d2[inside] * lattice.h ** 2
    return [(int(i), disp[j], float(dist2[j])) for j, i in enumerate(idx)]
