import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planelike import model as mdl
from planelike.lattice import Field, translate
from planelike.model import ModelSpec, energy_renormalized
from planelike.solver import (ConvergenceError, SolverError, SolverOptions, brute_force_minimize,
                              canonical_inits, constrained_minimize, doubled_period_minimize,
                              make_class, minimal_minimizer, pure_phase_minimize, tile)

# tiny 1D oracle scale: 2 nodes per unit length, kernel reaching one cell
TINY = ModelSpec().with_(R_bar=1.0, eps_W=0.2)


@pytest.fixture(scope="module")
def tiny_phases():
    return pure_phase_minimize(TINY, 2, 1)


# ------------------------------------------------------------- pure phases


class TestPurePhases:
    @pytest.mark.parametrize("eps_W", [0.0, 0.3])
    def test_no_forcing(self, eps_W):
        ph = pure_phase_minimize(ModelSpec().with_(eta=0.0, eps_W=eps_W), 8, 2)
        assert np.all(ph.u_plus == 1.0) and np.all(ph.u_minus == -1.0)
        assert ph.energy_plus == 0.0 and ph.energy_minus == 0.0
        assert ph.delta_eta == 0.0

    def test_default_forcing(self, phases8):
        assert 0 < phases8.delta_eta <= 0.05
        assert np.all(np.abs(phases8.u_plus - 1) <= 0.05)
        assert np.all(np.abs(phases8.u_minus + 1) <= 0.05)

    def test_delta_shrinks_with_eta(self):
        d = [pure_phase_minimize(ModelSpec().with_(eta=e), 8, 2).delta_eta for e in (0.02, 0.01, 0.005)]
        assert d[0] > d[1] > d[2] > 0

    def test_equal_energies(self, model, phases8):
        assert phases8.energy_gap <= 1e-10
        e_minus = mdl.cell_energy(model, 8, 2, phases8.u_minus).total
        assert e_minus == pytest.approx(phases8.energy_minus, abs=1e-15)

    def test_half_shift_symmetry(self, phases8):
        # u_-(x) = -u_+(x + e_1/2 + e_2/2)
        shifted = np.roll(phases8.u_plus, (-4, -4), axis=(0, 1))
        assert np.max(np.abs(phases8.u_minus + shifted)) <= 1e-10

    def test_stationary(self, model, phases8):
        for u in (phases8.u_plus, phases8.u_minus):
            assert np.max(np.abs(mdl.cell_gradient(model, 8, 2, u))) <= 1e-10

    def test_w6_well(self):
        ph = pure_phase_minimize(ModelSpec().with_(well="w6"), 8, 2)
        assert ph.energy_gap <= 1e-10 and ph.delta_eta <= 0.05

    def test_three_dimensions(self):
        ph = pure_phase_minimize(ModelSpec().with_(R_bar=1.0), 4, 3)
        assert ph.energy_gap <= 1e-10

    def test_eta_too_large(self):
        with pytest.raises(SolverError):
            pure_phase_minimize(ModelSpec().with_(eta=6.0), 8, 2)

    def test_odd_grid(self):
        with pytest.raises(SolverError):
            pure_phase_minimize(ModelSpec(), 7, 2)

    def test_budget_exhausted(self):
        with pytest.raises(ConvergenceError):
            pure_phase_minimize(ModelSpec(), 8, 2, SolverOptions(max_iter=1))


# ------------------------------------------------------- admissible classes


class TestClass:
    def test_membership(self, model):
        cls = make_class(model, (1, 0), 2.0, n=4)
        lo, hi = cls.bounds()
        lev = np.broadcast_to(cls.lattice.levels, cls.lattice.shape)
        assert np.all(lo[lev <= 0] == 0.95) and np.all(hi[lev >= 2] == -0.95)
        assert np.all(lo[lev > 0] == -1.05) and np.all(hi[lev < 2] == 1.05)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.1, 5.0))
def test_projection_is_admissible(seed, scale):
    cls = make_class(ModelSpec(), (2, 1), 1.5, n=4)
    v = np.random.default_rng(seed).standard_normal(cls.lattice.shape) * scale
    p = cls.project(v)
    assert cls.contains(Field(cls.lattice, p))
    assert np.array_equal(cls.project(p), p)


# ------------------------------------------------------ constrained descent


@pytest.fixture(scope="module")
def run(model, phases8):
    cls = make_class(model, (1, 0), 4.0, n=8)
    lin = canonical_inits(cls)[0]
    res = constrained_minimize(model, cls, phases8, lin)
    return cls, lin, res


class TestConstrained:
    def test_converged_admissible(self, run):
        cls, _, res = run
        assert res.converged and cls.contains(res.field)
        assert res.final_gradient_norm <= SolverOptions().tol

    def test_monotone_trace(self, run):
        trace = np.asarray(run[2].trace)
        assert trace.size > 1 and np.all(np.diff(trace) <= 0)

    def test_below_linear_profile(self, model, phases8, run):
        cls, lin, res = run
        f_lin = energy_renormalized(model, cls.lattice, Field(cls.lattice, lin, phases8.u_plus,
                                                              phases8.u_minus))
        assert res.f_omega <= f_lin
        assert res.f_omega == pytest.approx(energy_renormalized(model, cls.lattice, res.field),
                                            rel=1e-12)

    def test_fixed_point(self, model, phases8, run):
        cls, _, res = run
        again = constrained_minimize(model, cls, phases8, res.field)
        assert again.iterations == 0
        assert np.array_equal(again.field.values, res.field.values)

    def test_breakdown(self, model, run):
        cls, _, res = run
        e = mdl.energy_total(model, cls.lattice, res.field)
        assert res.breakdown.total == pytest.approx(e.total, rel=1e-12)

    def test_budget_flagged(self, model, phases8, run):
        cls, lin, _ = run
        res = constrained_minimize(model, cls, phases8, lin, SolverOptions(max_iter=3))
        assert not res.converged and res.warnings

    def test_projects_start(self, model, phases8, run):
        cls = run[0]
        res = constrained_minimize(model, cls, phases8, np.full(cls.lattice.shape, 3.0))
        assert cls.contains(res.field)

    def test_grid_mismatch(self, model, phases4, run):
        with pytest.raises(SolverError):
            constrained_minimize(model, run[0], phases4, run[1])

    def test_translation_covariance(self, tiny_phases):
        """Shifting the strip by one period shifts the minimizer by one period."""
        a = make_class(TINY, (1,), 2.0, n=2, A=0.0, L=1.0)
        b = make_class(TINY, (1,), 2.0, n=2, A=1.0, L=1.0)
        ra = minimal_minimizer(TINY, a, tiny_phases)
        rb = minimal_minimizer(TINY, b, tiny_phases)
        assert np.max(np.abs(ra.field.values - rb.field.values)) <= 1e-6
        assert rb.f_omega == pytest.approx(ra.f_omega, abs=1e-12)


# ------------------------------------------------------ brute-force oracle


def _tiny_class(M=1.0, A=0.0):
    return make_class(TINY, (1,), M, n=2, A=A, L=1.0)


class TestBruteForce:
    def test_one_free_node(self, tiny_phases):
        # band {0, 1/2}, both nodes pinned near a phase: pulling both inward
        # shortens the jump and costs only w(0.95) ~ 1e-2 in potential
        m = TINY.with_(eta=0.0, eps_W=0.0)
        cls = make_class(m, (1,), 0.5, n=2, L=0.0)
        ph = pure_phase_minimize(m, 2, 1)
        fld, e = brute_force_minimize(m, cls, ph)
        assert fld.values.tolist() == [0.95, -0.95]
        assert e < energy_renormalized(m, cls.lattice, fld.copy(np.array([1.0, -1.0])))

    def test_one_free_node_table(self, tiny_phases):
        m = TINY
        cls = make_class(m, (1,), 1.0, n=2, L=0.0)
        lat = cls.lattice
        assert lat.size == 3
        d = m.delta0
        levels = [-1 - d, -1.0, -1 + d, 0.0, 1 - d, 1.0, 1 + d]
        fld, e = brute_force_minimize(m, cls, tiny_phases)
        # independent table: every admissible vector evaluated through F_omega
        lo, hi = cls.bounds()
        table = {}
        for vec in itertools.product(levels, repeat=lat.size):
            v = np.array(vec)
            if np.all(v >= lo - 1e-15) and np.all(v <= hi + 1e-15):
                f = Field(lat, v, tiny_phases.u_plus, tiny_phases.u_minus)
                table[vec] = energy_renormalized(m, lat, f, "direct")
        free = int(np.sum((lo < -1) & (hi > 1)))
        assert free == 1 and len(table) == 7 * 3 * 3
        best = min(table.values())
        assert e == pytest.approx(best, abs=1e-13)
        winners = sorted(k for k, v in table.items() if v <= best + 1e-13)
        assert tuple(fld.values) == winners[0]

    def test_optimal_over_enumeration(self, tiny_phases):
        cls = _tiny_class(1.5)
        fld, e = brute_force_minimize(TINY, cls, tiny_phases)
        rng = np.random.default_rng(3)
        d = TINY.delta0
        levels = np.array([-1 - d, -1.0, -1 + d, 0.0, 1 - d, 1.0, 1 + d])
        for _ in range(300):
            v = cls.project(rng.choice(levels, cls.lattice.shape))
            f = energy_renormalized(TINY, cls.lattice, fld.copy(v))
            assert e <= f + 1e-13

    def test_too_large(self, model, phases8):
        cls = make_class(model, (1, 0), 2.0, n=8)
        with pytest.raises(SolverError):
            brute_force_minimize(model, cls, phases8)

    def test_too_many_levels(self, tiny_phases):
        with pytest.raises(SolverError):
            brute_force_minimize(TINY, _tiny_class(), tiny_phases, levels=np.linspace(-1, 1, 8))

    @pytest.mark.parametrize("M,A", [(1.0, 0.0), (1.5, 0.5), (2.0, 0.0)])
    def test_descent_reaches_refined_oracle(self, tiny_phases, M, A):
        cls = _tiny_class(M, A)
        q, _ = brute_force_minimize(TINY, cls, tiny_phases)
        ref = constrained_minimize(TINY, cls, tiny_phases, q.values)
        got = minimal_minimizer(TINY, cls, tiny_phases)
        assert abs(got.f_omega - ref.f_omega) <= 1e-9


def _least_global_minimizer(model, cls, phases, keep=40):
    """Refine the best quantized candidates; pointwise min of those reaching the optimum."""
    d = model.delta0
    levels = [-1 - d, -1.0, -1 + d, 0.0, 1 - d, 1.0, 1 + d]
    lat = cls.lattice
    lo, hi = cls.bounds()
    cands = [np.array(v) for v in itertools.product(levels, repeat=lat.size)
             if np.all(np.array(v) >= lo - 1e-15) and np.all(np.array(v) <= hi + 1e-15)]
    table = mdl.pair_table(model, lat, phases.u_plus, phases.u_minus)
    e = table.energy(np.array(cands))
    order = np.argsort(e, kind="stable")[:keep]
    refined = [constrained_minimize(model, cls, phases, cands[i]) for i in order]
    best = min(r.f_omega for r in refined)
    winners = [r.field.values for r in refined if r.f_omega <= best + 1e-10]
    return np.min(winners, axis=0), best


class TestMinimal:
    @pytest.mark.parametrize("M,A", [(1.0, 0.0), (1.5, 0.5)])
    def test_matches_least_global_minimizer(self, tiny_phases, M, A):
        cls = _tiny_class(M, A)
        oracle, best = _least_global_minimizer(TINY, cls, tiny_phases)
        got = minimal_minimizer(TINY, cls, tiny_phases)
        assert got.f_omega == pytest.approx(best, abs=1e-9)
        assert np.max(np.abs(got.field.values - oracle)) <= 1e-6

    def test_single_member(self, model, phases8):
        cls = make_class(model, (1, 0), 3.0, n=8)
        one = minimal_minimizer(model, cls, phases8, SolverOptions(ensemble_size=1))
        lin = constrained_minimize(model, cls, phases8, canonical_inits(cls)[0])
        assert one.converged
        assert one.f_omega <= lin.f_omega + 1e-9

    def test_two_members(self, model, phases8):
        cls = make_class(model, (1, 1), 3.0, n=8)
        rng = np.random.default_rng(7)
        u = constrained_minimize(model, cls, phases8, cls.project(rng.uniform(-1, 1, cls.lattice.shape)))
        v = constrained_minimize(model, cls, phases8, cls.project(rng.uniform(-1, 1, cls.lattice.shape)))
        lo, hi = mdl.submodular_combine(u.field, v.field)
        f_lo = energy_renormalized(model, cls.lattice, lo)
        f_hi = energy_renormalized(model, cls.lattice, hi)
        assert f_lo + f_hi <= u.f_omega + v.f_omega + 1e-10
        assert f_lo <= max(u.f_omega, v.f_omega) + 1e-9
        res = minimal_minimizer(model, cls, phases8, SolverOptions(ensemble_size=1),
                                extra_inits=[u.field.values, v.field.values])
        assert res.f_omega <= min(u.f_omega, v.f_omega) + 1e-9
        assert np.all(res.field.values <= np.minimum(u.field.values, v.field.values) + 1e-6)

    def test_combination_log(self, model, phases8):
        cls = make_class(model, (2, 1), 2.0, n=8)
        log = []
        res = minimal_minimizer(model, cls, phases8, SolverOptions(ensemble_size=3), log=log)
        assert res.converged and log
        assert min(r["slack"] for r in log) >= -1e-10

    def test_deterministic_across_threads(self, model, phases8):
        cls = make_class(model, (1, 1), 2.0, n=8)
        a = minimal_minimizer(model, cls, phases8, SolverOptions(ensemble_size=3, threads=1))
        b = minimal_minimizer(model, cls, phases8, SolverOptions(ensemble_size=3, threads=3))
        assert np.array_equal(a.field.values, b.field.values) and a.f_omega == b.f_omega


# ------------------------------------------------------------------ doubling


class TestDoubling:
    def test_trivial_multiplier(self, model, phases4):
        cls = make_class(model, (1, 0), 3.0, n=4)
        base = minimal_minimizer(model, cls, phases4)
        cls1, res1 = doubled_period_minimize(model, (1, 0), (1,), 3.0, phases4, n=4)
        assert cls1.lattice == cls.lattice
        assert np.array_equal(res1.field.values, base.field.values)

    def test_energy_scales_with_period(self, model, phases4):
        cls = make_class(model, (2, 1), 2.0, n=4)
        base = minimal_minimizer(model, cls, phases4, SolverOptions(ensemble_size=2))
        lat2 = make_class(model, (2, 1), 2.0, n=4, m=(2,)).lattice
        f2 = energy_renormalized(model, lat2, tile(lat2, base.field))
        assert f2 == pytest.approx(2 * base.f_omega, rel=1e-10)

    def test_tiling_is_periodic_translate(self, model, phases4):
        cls = make_class(model, (1, 0), 2.0, n=4)
        lat3 = make_class(model, (1, 0), 2.0, n=4, m=(3,)).lattice
        f = Field(cls.lattice, np.random.default_rng(0).uniform(-1, 1, cls.lattice.shape),
                  phases4.u_plus, phases4.u_minus)
        t = tile(lat3, f)
        z = np.asarray(cls.lattice.basis.vectors[0])
        assert np.array_equal(translate(lat3, t, z).values, t.values)

    def test_doubled_equals_tiled(self, model, phases4):
        cls = make_class(model, (1, 0), 3.0, n=4)
        base = minimal_minimizer(model, cls, phases4)
        cls2, res2 = doubled_period_minimize(model, (1, 0), (2,), 3.0, phases4, n=4)
        assert np.max(np.abs(res2.field.values - tile(cls2.lattice, base.field).values)) <= 1e-6
        assert res2.f_omega == pytest.approx(2 * base.f_omega, rel=1e-8)

    def test_incompatible_tiling(self, model, phases4):
        a = make_class(model, (1, 0), 3.0, n=4)
        b = make_class(model, (1, 1), 3.0, n=4, m=(2,))
        f = Field(a.lattice, np.zeros(a.lattice.shape))
        with pytest.raises(SolverError):
            tile(b.lattice, f)


def test_options_validation():
    with pytest.raises(SolverError):
        SolverOptions(step_rule="newton")
    with pytest.raises(SolverError):
        SolverOptions(ensemble_size=0)


def test_armijo_rule(model, phases8):
    cls = make_class(model, (1, 0), 3.0, n=8)
    lin = canonical_inits(cls)[0]
    a = constrained_minimize(model, cls, phases8, lin, SolverOptions(step_rule="armijo"))
    b = constrained_minimize(model, cls, phases8, lin)
    assert a.converged and a.f_omega == pytest.approx(b.f_omega, abs=1e-9)
