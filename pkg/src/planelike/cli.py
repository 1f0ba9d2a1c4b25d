"""Batch entry point: ``planelike {phases,minimize,sweep,scaling,verify,irrational}``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path


from . import analysis as an
from . import persistence as io
from . import suite
from .config import ConfigError, RunConfig, load_config
from .solver import (ConvergenceError, SolverError, make_class, minimal_minimizer,
                     pure_phase_minimize)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
log = logging.getLogger("planelike")


class _SolverFailure(Exception):
    pass


class Run:
    """Collects records and artifacts of one command and writes them at the end."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg, self.command = cfg, command
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.records, self.artifacts = [], []
        self.solver_failed = False

    def add(self, rec: dict) -> dict:
        self.records.append(rec)
        log.info("%-22s %s", rec["check"], "pass" if rec["passed"] else "FAIL")
        return rec

    def save_field(self, name: str, fld):
        io.save_field(fld, self.out / name, self.cfg.model)
        self.artifacts.append(name)

    def save_cells(self, name: str, cells: dict):
        io.save_cells(cells, self.out / name, self.cfg.model)
        self.artifacts.append(name)

    def save_csv(self, name: str, rows):
        io.write_scaling_csv(rows, self.out / name)
        self.artifacts.append(name)

    def finish(self) -> int:
        report = f"{self.command}.jsonl"
        io.write_report(self.records, self.out / report)
        self.artifacts.append(report)
        echo = self.cfg.as_dict()
        echo["solver"].pop("threads")  # execution resource; results do not depend on it
        echo.pop("out")
        opts = {k: v for k, v in dataclasses.asdict(self.cfg.solver).items() if k != "threads"}
        io.write_manifest(self.out / f"{self.command}.manifest.json", self.cfg.model, opts,
                          self.cfg.seed, self.artifacts, {"command": self.command, **echo})
        if self.solver_failed:
            return EXIT_SOLVER
        return EXIT_OK if all(r["passed"] for r in self.records) else EXIT_CHECK


def _omega_tag(omega) -> str:
    return "_".join(str(int(x)).replace("-", "m") for x in omega)


def _solver_record(run: Run, what: str, exc: Exception):
    run.solver_failed = True
    run.add(suite.record("solver", {"stage": what}, {"error": str(exc)}, {}, False))


def _phases(run: Run, n: int = None, model=None):
    cfg = run.cfg
    model = model or cfg.model
    n = n or cfg.lattice["n"]
    N = cfg.lattice["N"]
    try:
        ph = pure_phase_minimize(model, n, N, cfg.solver)
    except SolverError as exc:
        _solver_record(run, "pure_phases", exc)
        raise _SolverFailure from exc
    gap_tol = 1e-10
    run.add(suite.record(
        "pure_phases", {"eta": model.eta, "n": n, "N": N, "s": model.kernel.s},
        {"delta_eta": ph.delta_eta, "energy_plus": ph.energy_plus, "energy_minus": ph.energy_minus,
         "energy_gap": ph.energy_gap, "iterations": list(ph.iterations)},
        {"delta0": model.delta0, "energy_gap": gap_tol},
        ph.delta_eta <= model.delta0 and ph.energy_gap <= gap_tol))
    return ph


def _minimize(run: Run, phases, omega, M: float):
    cfg, lat = run.cfg, run.cfg.lattice
    cls = make_class(cfg.model, omega, M, n=lat["n"], m=lat["m"], A=lat["A"], L=lat["L"])
    res = minimal_minimizer(cfg.model, cls, phases, cfg.solver)
    run.add(suite.record(
        "minimal_minimizer", {"omega": list(omega), "M": M, "n": lat["n"], "m": lat["m"],
                              "A": lat["A"], "L": lat["L"]},
        {"f_omega": res.f_omega, "iterations": res.iterations,
         "final_gradient_norm": res.final_gradient_norm, "active": res.active_constraints,
         "warnings": res.warnings, "converged": res.converged},
        {"gradient": cfg.solver.tol}, res.converged))
    if not res.converged:
        run.solver_failed = True
    run.save_field(f"minimizer_{_omega_tag(omega)}.snap", res.field)
    return cls, res


def _width_record(run: Run, cls, res, M: float):
    exp = run.cfg.experiment
    rep = an.interface_width(cls.lattice, res.field, exp["theta"], run.cfg.model.delta0)
    d = rep.as_dict()
    d["direction"] = list(d["direction"])
    return run.add(suite.record("width", {"omega": list(cls.lattice.direction.omega), "M": M},
                                d, {"max_width": M}, (not rep.empty) and rep.width <= M)), rep


def cmd_phases(run: Run) -> None:
    ph = _phases(run)
    run.save_cells("phases.snap", {"u_plus": ph.u_plus, "u_minus": ph.u_minus})


def cmd_minimize(run: Run) -> None:
    cfg = run.cfg
    omega, M = cfg.lattice["omega"], cfg.lattice["M"]
    ph = _phases(run)
    cls, res = _minimize(run, ph, omega, M)
    if run.solver_failed:
        return
    checks = cfg.experiment["checks"]
    if "width" in checks:
        _width_record(run, cls, res, M)
    if "birkhoff" in checks:
        trans = an.default_translations(cls.lattice.N, int(cfg.experiment["birkhoff_radius"]))
        rep = an.birkhoff_check(cls.lattice, res.field, translations=trans)
        d = rep.as_dict()
        d["direction"] = list(d["direction"])
        run.add(suite.record("birkhoff", {"omega": list(omega), "radius":
                                          cfg.experiment["birkhoff_radius"]},
                             d, {"band": rep.tol}, rep.passed))
    if "unconstrained" in checks:
        rep = an.unconstrained_check(cfg.model, ph, omega, M, cfg.experiment["a_values"],
                                     n=cfg.lattice["n"], L=cfg.lattice["L"], opts=cfg.solver,
                                     base=res)
        if not all(r["converged"] for r in rep["rows"]):
            run.solver_failed = True
        rep["direction"] = list(rep["direction"])
        run.add(suite.record("unconstrained", {"omega": list(omega), "M": M,
                                               "a_values": cfg.experiment["a_values"]},
                             {"status": rep["status"], "rows": rep["rows"]},
                             {"sup": rep["tol"]}, rep["passed"]))


def cmd_sweep(run: Run) -> None:
    cfg = run.cfg
    M = cfg.lattice["M"]
    ph = _phases(run)
    widths = []
    for omega in cfg.experiment["directions"]:
        cls, res = _minimize(run, ph, omega, M)
        if not res.converged:
            continue
        _, rep = _width_record(run, cls, res, M)
        widths.append(rep.width)
    ok = len(widths) == len(cfg.experiment["directions"]) and min(widths, default=0.0) > 0
    ratio = max(widths) / min(widths) if ok else float("inf")
    run.add(suite.record("width_ratio", {"directions": cfg.experiment["directions"], "M": M},
                         {"widths": widths, "ratio": ratio}, {"max_ratio": 2.0},
                         ok and ratio <= 2.0))


def cmd_scaling(run: Run) -> None:
    cfg, exp = run.cfg, run.cfg.experiment
    for s in exp["s_values"]:
        a0, eps = float(exp["scaling_a0"]), cfg.model.kernel.eps_K
        model = cfg.model.with_(s=float(s), R_bar=float(exp["scaling_R_bar"]), a0=a0,
                                **{"lambda": a0 * (1 - eps), "Lambda": a0 * (1 + eps)})
        ph = _phases(run, exp["scaling_n"], model)
        res, rep = an.scaling_run(model, ph, n=exp["scaling_n"], half_width=exp["scaling_half_width"],
                                  L=exp["scaling_L"], radii=exp["radii"], opts=cfg.solver,
                                  threads=cfg.solver.threads)
        if not res.converged:
            run.solver_failed = True
        tag = format(float(s), "g")
        run.save_csv(f"scaling_s{tag}.csv", rep.table)
        ok = abs(rep.slope - rep.reference_slope) <= 0.3 and res.converged
        if float(s) == 0.5:
            ok = ok and rep.log_coefficient > 0
        d = rep.as_dict()
        d.pop("table")
        run.add(suite.record("scaling", {"s": float(s), "n": exp["scaling_n"],
                                         "R_bar": exp["scaling_R_bar"], "a0": a0,
                                         "half_width": exp["scaling_half_width"]},
                             d, {"slope": 0.3}, ok))


def cmd_verify(run: Run) -> None:
    model, opts = run.cfg.model, run.cfg.solver
    run.add(suite.check_submodularity(model, seed=run.cfg.seed))
    run.add(suite.check_gradient(model, seed=run.cfg.seed + 1))
    run.add(suite.check_oracle(opts=opts))
    run.add(suite.check_birkhoff(model, opts=opts))
    run.add(suite.check_doubling(model, opts=opts))


def cmd_irrational(run: Run) -> None:
    cfg, exp = run.cfg, run.cfg.experiment
    omega_real = cfg.lattice["omega_real"] or [1.0, math.sqrt(2.0)]
    n = exp["irrational_n"]
    ph = _phases(run, n)
    opts = dataclasses.replace(cfg.solver, ensemble_size=int(exp["irrational_ensemble"]))
    rep = an.irrational_convergence(cfg.model, ph, omega_real, count=exp["count"],
                                    width=exp["irrational_width"], n=n, L=cfg.lattice["L"],
                                    radius=exp["irrational_radius"], opts=opts)
    converged = all(r["converged"] for r in rep["runs"])
    if not converged:
        run.solver_failed = True
    for r in rep["runs"]:
        r["direction"] = list(r["direction"])
    run.add(suite.record("irrational", {"omega_real": rep["omega"], "count": exp["count"],
                                        "width": exp["irrational_width"], "n": n},
                         {"runs": rep["runs"], "gaps": rep["gaps"], "center": rep["center"]},
                         {"strictly_decreasing": True}, rep["decreasing"] and converged))


COMMANDS = {
    "phases": (cmd_phases, "compute the pure phases u_+ and u_-"),
    "minimize": (cmd_minimize, "minimal minimizer for one direction plus checks"),
    "sweep": (cmd_sweep, "interface widths over a list of directions"),
    "scaling": (cmd_scaling, "ball-energy growth of a planar interface"),
    "verify": (cmd_verify, "small-scale property suite"),
    "irrational": (cmd_irrational, "rational approximants of an irrational direction"),
}


def _vector(text: str):
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty vector")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (default $PLANELIKE_THREADS or 1)")
    common.add_argument("--omega", type=_vector, help="direction, e.g. 2,1 (real entries for irrational)")
    common.add_argument("--s", type=float, help="kernel exponent")
    common.add_argument("--eta", type=float, help="mesoscopic amplitude")
    common.add_argument("--M", type=float, help="strip width along omega")
    common.add_argument("--n", type=int, help="grid points per unit length")
    common.add_argument("-q", "--quiet", action="store_true")
    p = argparse.ArgumentParser(prog="planelike", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def _overrides(args) -> dict:
    ov = {"out": args.out, "seed": args.seed, "threads": args.threads, "s": args.s,
          "eta": args.eta, "M": args.M, "n": args.n}
    if args.omega is not None:
        if args.command == "irrational":
            ov["omega_real"] = args.omega
        else:
            if not all(float(x).is_integer() for x in args.omega):
                raise ConfigError("omega: expected integer entries")
            ov["omega"] = [int(x) for x in args.omega]
    return ov


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        ov = _overrides(args)
        omega_real = ov.pop("omega_real", None)
        cfg = load_config(args.config, ov)
        if omega_real is not None:
            if len(omega_real) != cfg.lattice["N"] or not any(omega_real):
                raise ConfigError(f"omega: expected {cfg.lattice['N']} numbers, not all zero")
            cfg.lattice["omega_real"] = omega_real
    except ConfigError as exc:
        print(f"planelike: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg, args.command)
    try:
        COMMANDS[args.command][0](run)
    except _SolverFailure:
        pass
    except ConvergenceError as exc:
        _solver_record(run, args.command, exc)
    code = run.finish()
    if code == EXIT_SOLVER:
        print("planelike: solver did not converge", file=sys.stderr)
    elif code == EXIT_CHECK:
        failed = sorted({r["check"] for r in run.records if not r["passed"]})
        print(f"planelike: failed checks: {', '.join(failed)}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
