"""End-to-end acceptance criteria.

Run alone with ``pytest -m acceptance``; the terminal summary prints one
PASS/FAIL line per criterion with its runtime.
"""

import math
import time

import numpy as np
import pytest
import yaml

from planelike import analysis as an
from planelike import persistence as io
from planelike import suite
from planelike.cli import main
from planelike.solver import SolverOptions, make_class, minimal_minimizer, pure_phase_minimize

pytestmark = pytest.mark.acceptance

DIRECTIONS = [(1, 0), (1, 1), (2, 1), (3, 2)]
N_GRID, M_STRIP, MARGIN = 16, 20.0, 8.0

_minimizers = {}


@pytest.fixture(scope="module")
def phases16(model):
    return pure_phase_minimize(model, N_GRID, 2)


def _strip_minimizers(model, phases):
    for omega in DIRECTIONS:
        if omega not in _minimizers:
            cls = make_class(model, omega, M_STRIP, n=N_GRID, L=MARGIN)
            _minimizers[omega] = (cls, minimal_minimizer(model, cls, phases, SolverOptions()))
    return _minimizers


@pytest.mark.criterion(1)
def test_submodularity(model, criterion):
    rec = suite.check_submodularity(model, pairs=200, n=8)
    m = rec["measured"]
    criterion["detail"] = (f"min kinetic slack {m['min_kinetic_slack']:.2e}, "
                           f"potential defect {m['max_potential_defect']:.1e}")
    assert rec["passed"], m
    assert m["min_kinetic_slack"] >= -1e-12
    assert criterion["elapsed"]() < 10


@pytest.mark.criterion(2)
def test_gradient(model, criterion):
    rec = suite.check_gradient(model, fields=20)
    criterion["detail"] = f"max relative error {rec['measured']['max_relative_error']:.2e}"
    assert rec["measured"]["max_relative_error"] <= 1e-6
    assert criterion["elapsed"]() < 30


@pytest.mark.criterion(3)
def test_oracle_equivalence(criterion):
    rec = suite.check_oracle()
    assert rec["inputs"]["instances"] >= 10 and max(rec["inputs"]["nodes"]) <= 12
    criterion["detail"] = f"max energy diff {rec['measured']['max_energy_diff']:.1e}"
    assert rec["measured"]["max_energy_diff"] <= 1e-9
    assert criterion["elapsed"]() < 120


@pytest.mark.criterion(4)
def test_pure_phases(model, criterion):
    free = pure_phase_minimize(model.with_(eta=0.0), 8, 2)
    assert np.all(free.u_plus == 1.0) and np.all(free.u_minus == -1.0)
    assert free.energy_plus == 0.0 and free.energy_minus == 0.0
    deltas, gaps = [], []
    for eta in (0.02, 0.01, 0.005):
        ph = pure_phase_minimize(model.with_(eta=eta), 8, 2)
        deltas.append(ph.delta_eta)
        gaps.append(ph.energy_gap)
    criterion["detail"] = "delta_eta " + ", ".join(f"{d:.2e}" for d in deltas)
    assert all(b < a for a, b in zip(deltas, deltas[1:]))
    assert max(deltas) <= model.delta0
    assert max(gaps) <= 1e-10
    assert criterion["elapsed"]() < 60


@pytest.mark.criterion(5)
def test_strip_confinement(model, phases16, criterion):
    mins = _strip_minimizers(model, phases16)
    widths = []
    for omega, (cls, res) in mins.items():
        assert res.converged, (omega, res.warnings)
        rep = an.interface_width(cls.lattice, res.field, delta0=model.delta0)
        assert not rep.empty
        widths.append(rep.width)
    ratio = max(widths) / min(widths)
    criterion["detail"] = f"widths {', '.join(f'{w:.3f}' for w in widths)}; ratio {ratio:.3f}"
    assert max(widths) <= M_STRIP
    assert ratio <= 2.0
    assert criterion["elapsed"]() < 600


@pytest.mark.criterion(6)
@pytest.mark.parametrize("omega", DIRECTIONS)
def test_birkhoff(model, phases16, omega, criterion):
    cls, res = _strip_minimizers(model, phases16)[omega]
    start = time.perf_counter()
    rep = an.birkhoff_check(cls.lattice, res.field, translations=an.default_translations(2, 2),
                            tol=1e-6)
    secs = time.perf_counter() - start
    criterion["detail"] = f"{rep.checked} translations, {rep.total} violations, check {secs:.1f} s"
    assert rep.checked == 24 and rep.total == 0
    assert secs < 60


@pytest.mark.criterion(7)
def test_doubling(model, criterion):
    rec = suite.check_doubling(model, direction=(1, 0), m=(2,), n=8, M=12.0)
    m = rec["measured"]
    criterion["detail"] = f"sup {m['sup_diff']:.1e}, energy rel {m['energy_rel_diff']:.1e}"
    assert m["sup_diff"] <= 1e-6 and m["energy_rel_diff"] <= 1e-10
    assert rec["passed"]
    assert criterion["elapsed"]() < 300


@pytest.mark.criterion(8)
def test_unconstrained_transition(model, phases16, criterion):
    cls, res = _strip_minimizers(model, phases16)[(1, 0)]
    width = an.interface_width(cls.lattice, res.field, delta0=model.delta0).width
    M = 2.0 * width
    rep = an.unconstrained_check(model, phases16, (1, 0), M, a_values=[1, 2], n=N_GRID, L=MARGIN,
                                 tol=1e-5)
    sups = [max(r["sup_diff_shared_lower"], r["sup_diff_aligned"]) for r in rep["rows"]]
    criterion["detail"] = f"M {M:.3f}, sup diffs {', '.join(f'{s:.1e}' for s in sups)}"
    assert rep["status"] == "unconstrained"
    assert all(r["active_enlarged"] == 0 and r["active_symmetric"] == 0 for r in rep["rows"])
    assert max(sups) <= 1e-5
    assert rep["passed"]
    assert criterion["elapsed"]() < 300


def _run_cli(tmp_path, name, doc, command, *extra):
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out), "-q", *extra])
    return code, out


@pytest.mark.criterion(9)
def test_energy_scaling(tmp_path, criterion):
    code, out = _run_cli(tmp_path, "scaling", {}, "scaling")
    recs = [r for r in io.read_report(out / "scaling.jsonl") if r["check"] == "scaling"]
    parts = []
    for r in recs:
        m = r["measured"]
        parts.append(f"s={m['s']:g} slope {m['slope']:.3f} (ref {m['reference_slope']:g})")
        assert abs(m["slope"] - m["reference_slope"]) <= 0.3, m
    criterion["detail"] = "; ".join(parts)
    assert sorted(r["measured"]["s"] for r in recs) == [0.25, 0.5, 0.75]
    half = next(r for r in recs if r["measured"]["s"] == 0.5)
    assert half["measured"]["log_coefficient"] > 0
    assert code == 0
    assert criterion["elapsed"]() < 900


@pytest.mark.criterion(10)
def test_determinism(tmp_path, criterion):
    doc = {"lattice": {"n": 8, "M": 8.0, "omega": [2, 1], "L": 3.0},
           "solver": {"ensemble_size": 4},
           "experiment": {"checks": ["width", "birkhoff"]}}
    outs = []
    for threads in (1, 2, 8):
        code, out = _run_cli(tmp_path, f"t{threads}", doc, "minimize", "--threads", str(threads))
        assert code == 0
        outs.append(out)
    names = sorted(f.name for f in outs[0].iterdir())
    assert "minimizer_2_1.snap" in names and "minimize.jsonl" in names
    for other in outs[1:]:
        assert sorted(f.name for f in other.iterdir()) == names
        for f in names:
            assert (outs[0] / f).read_bytes() == (other / f).read_bytes(), f
    criterion["detail"] = f"{len(names)} artifacts identical across 1, 2, 8 threads"
    assert criterion["elapsed"]() < 300


@pytest.mark.criterion(11)
def test_irrational_approximation(tmp_path, criterion):
    code, out = _run_cli(tmp_path, "irrational", {"lattice": {"omega_real": [1.0, math.sqrt(2)]}},
                         "irrational")
    rec = next(r for r in io.read_report(out / "irrational.jsonl") if r["check"] == "irrational")
    gaps = rec["measured"]["gaps"]
    criterion["detail"] = "gaps " + ", ".join(f"{g:.2e}" for g in gaps)
    assert len(gaps) >= 3
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert all(r["converged"] for r in rec["measured"]["runs"])
    assert code == 0
    assert criterion["elapsed"]() < 900
