"""Run configuration: YAML file with ``model``, ``lattice``, ``solver`` and ``experiment`` sections."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .model import ModelError, ModelSpec
from .solver import SolverError, SolverOptions

THREADS_ENV = "PLANELIKE_THREADS"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


LATTICE_DEFAULTS = {"N": 2, "n": 16, "omega": [1, 0], "omega_real": None, "m": None,
                    "A": 0.0, "M": 20.0, "L": 8.0}
EXPERIMENT_DEFAULTS = {
    "directions": [[1, 0], [1, 1], [2, 1], [3, 2]],
    "a_values": [1, 2],
    "theta": None,
    "checks": ["width", "birkhoff", "unconstrained"],
    "birkhoff_radius": 2,
    "s_values": [0.25, 0.5, 0.75],
    "radii": list(range(3, 13)),
    "scaling_n": 32,
    "scaling_R_bar": 24.0,
    "scaling_a0": 0.2,
    "scaling_half_width": 20.0,
    "scaling_L": 2.0,
    "count": 4,
    "irrational_n": 8,
    "irrational_width": 12.0,
    "irrational_radius": 1.5,
    "irrational_ensemble": 2,
}


@dataclass
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    lattice: dict = field(default_factory=lambda: dict(LATTICE_DEFAULTS))
    solver: SolverOptions = field(default_factory=SolverOptions)
    experiment: dict = field(default_factory=lambda: dict(EXPERIMENT_DEFAULTS))
    out: str = "out"
    seed: int = 0

    def as_dict(self) -> dict:
        return {"model": self.model.to_mapping(), "lattice": self.lattice,
                "solver": dataclasses.asdict(self.solver), "experiment": self.experiment,
                "out": self.out, "seed": self.seed}


def _check_keys(section: str, data: dict, allowed):
    for k in data:
        if k not in allowed:
            raise ConfigError(f"{section}.{k}: unknown key")


def _int_vector(key, v, length=None):
    if not isinstance(v, (list, tuple)) or not all(isinstance(x, int) and not isinstance(x, bool)
                                                    for x in v):
        raise ConfigError(f"{key}: expected a list of integers")
    if length is not None and len(v) != length:
        raise ConfigError(f"{key}: expected {length} entries")
    return [int(x) for x in v]


def _number(key, v, lo=None, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise ConfigError(f"{key}: expected {'an integer' if integer else 'a number'}")
    if isinstance(v, float) and not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    if lo is not None and v < lo:
        raise ConfigError(f"{key}: must be >= {lo}")
    return v


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected an integer, got {raw!r}")
    if val < 1:
        raise ConfigError(f"{THREADS_ENV}: must be >= 1")
    return val


def build_config(data: Optional[dict] = None, base_dir: Optional[Path] = None,
                 overrides: Optional[dict] = None) -> RunConfig:
    """Validate a raw mapping (plus flat CLI overrides) into a :class:`RunConfig`."""
    data = dict(data or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check_keys("config", data, {"model", "model_file", "lattice", "solver", "experiment",
                                 "out", "seed"})
    # model
    model_map = {}
    if "model_file" in data:
        path = Path(data["model_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"model_file: cannot read {path} ({exc.strerror})")
        if not isinstance(loaded, dict):
            raise ConfigError("model_file: expected a mapping")
        model_map.update(loaded)
    inline = data.get("model") or {}
    if not isinstance(inline, dict):
        raise ConfigError("model: expected a mapping")
    model_map.update(inline)
    for k in ("s", "eta"):
        if k in overrides:
            model_map[k] = overrides[k]
    for k, v in model_map.items():
        if k in ModelSpec._KEYS and k not in ("well", "meso_shape"):
            _number(f"model.{k}", v)
    try:
        model = ModelSpec.from_mapping(model_map)
    except ModelError as exc:
        msg = str(exc)
        key = next((k for k in ModelSpec._KEYS if k in msg.split()[0:1] or msg.startswith(k)), None)
        raise ConfigError(f"model{'.' + key if key else ''}: {msg}")
    # lattice
    lat = dict(LATTICE_DEFAULTS)
    raw_lat = data.get("lattice") or {}
    if not isinstance(raw_lat, dict):
        raise ConfigError("lattice: expected a mapping")
    _check_keys("lattice", raw_lat, LATTICE_DEFAULTS)
    lat.update(raw_lat)
    for k in ("omega", "M", "n"):
        if k in overrides:
            lat[k] = overrides[k]
    N = _number("lattice.N", lat["N"], 1, integer=True)
    if N not in (1, 2, 3):
        raise ConfigError("lattice.N: must be 1, 2 or 3")
    n = _number("lattice.n", lat["n"], 2, integer=True)
    if n % 2:
        raise ConfigError("lattice.n: must be even")
    if "omega" in raw_lat or "omega" in overrides or N == 2:
        lat["omega"] = _int_vector("lattice.omega", lat["omega"], N)
        if not any(lat["omega"]):
            raise ConfigError("lattice.omega: must be nonzero")
        if math.gcd(*lat["omega"]) != 1:
            raise ConfigError("lattice.omega: must be primitive (gcd 1)")
    else:
        lat["omega"] = [1] + [0] * (N - 1)
    if lat["omega_real"] is not None:
        v = lat["omega_real"]
        if not isinstance(v, (list, tuple)) or len(v) != N:
            raise ConfigError(f"lattice.omega_real: expected {N} numbers")
        lat["omega_real"] = [float(_number("lattice.omega_real", x)) for x in v]
        if not any(lat["omega_real"]):
            raise ConfigError("lattice.omega_real: must be nonzero")
    if lat["m"] is None:
        lat["m"] = [1] * (N - 1)
    lat["m"] = _int_vector("lattice.m", lat["m"], N - 1)
    if any(x < 1 for x in lat["m"]):
        raise ConfigError("lattice.m: entries must be >= 1")
    lat["A"] = float(_number("lattice.A", lat["A"]))
    lat["M"] = float(_number("lattice.M", lat["M"]))
    if lat["M"] <= 0:
        raise ConfigError("lattice.M: must be positive")
    lat["L"] = float(_number("lattice.L", lat["L"], 0))
    if lat["L"] < model.kernel.R_bar:
        raise ConfigError("lattice.L: must be at least the kernel truncation radius R_bar")
    # solver
    raw_sol = data.get("solver") or {}
    if not isinstance(raw_sol, dict):
        raise ConfigError("solver: expected a mapping")
    fields = {f.name for f in dataclasses.fields(SolverOptions)}
    _check_keys("solver", raw_sol, fields)
    sol = dict(raw_sol)
    for k, v in sol.items():
        if k != "step_rule":
            _number(f"solver.{k}", v, integer=k in ("max_iter", "ensemble_size", "seed", "threads",
                                                     "refresh", "soft_every"))
    seed = data.get("seed", sol.get("seed", 0))
    if "seed" in overrides:
        seed = overrides["seed"]
    seed = _number("seed", seed, 0, integer=True)
    sol["seed"] = seed
    threads = overrides.get("threads", sol.get("threads", default_threads()))
    sol["threads"] = _number("threads", threads, 1, integer=True)
    try:
        solver = SolverOptions(**sol)
    except SolverError as exc:
        raise ConfigError(f"solver: {exc}")
    # experiment
    exp = dict(EXPERIMENT_DEFAULTS)
    raw_exp = data.get("experiment") or {}
    if not isinstance(raw_exp, dict):
        raise ConfigError("experiment: expected a mapping")
    _check_keys("experiment", raw_exp, EXPERIMENT_DEFAULTS)
    exp.update(raw_exp)
    exp["directions"] = [_int_vector("experiment.directions", d, N) for d in exp["directions"]] \
        if N == 2 or "directions" in raw_exp else [lat["omega"]]
    exp["a_values"] = _int_vector("experiment.a_values", exp["a_values"])
    if exp["theta"] is not None:
        th = _number("experiment.theta", exp["theta"])
        if not 0 < th < 1:
            raise ConfigError("experiment.theta: must lie in (0, 1)")
    bad = set(exp["checks"]) - {"width", "birkhoff", "unconstrained"}
    if bad:
        raise ConfigError(f"experiment.checks: unknown check(s) {sorted(bad)}")
    for s in exp["s_values"]:
        if not 0 < _number("experiment.s_values", s) < 1:
            raise ConfigError("experiment.s_values: entries must lie in (0, 1)")
    for R in exp["radii"]:
        if _number("experiment.radii", R) < 3:
            raise ConfigError("experiment.radii: entries must be >= 3")
    for k in ("scaling_R_bar", "scaling_a0", "scaling_half_width", "irrational_width",
              "irrational_radius"):
        if not _number(f"experiment.{k}", exp[k]) > 0:
            raise ConfigError(f"experiment.{k}: must be positive")
    _number("experiment.scaling_L", exp["scaling_L"], 0)
    _number("experiment.count", exp["count"], 1, integer=True)
    _number("experiment.irrational_ensemble", exp["irrational_ensemble"], 1, integer=True)
    _number("experiment.birkhoff_radius", exp["birkhoff_radius"], 1, integer=True)
    for k in ("scaling_n", "irrational_n"):
        v = _number(f"experiment.{k}", exp[k], 2, integer=True)
        if v % 2:
            raise ConfigError(f"experiment.{k}: must be even")
    out = overrides.get("out", data.get("out", "out"))
    if not isinstance(out, str) or not out:
        raise ConfigError("out: expected a directory path")
    return RunConfig(model, lat, solver, exp, out, seed)


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    data = {}
    base = None
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {p} ({exc.strerror})")
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: invalid YAML ({exc.__class__.__name__})")
        if not isinstance(data, dict):
            raise ConfigError("config: expected a mapping at top level")
        base = p.parent
    return build_config(data, base, overrides)
