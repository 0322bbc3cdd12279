"""JSON problem and junction configurations."""
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .costexpr import ExprError, Function, variables_of
from .fluxmodel import FluxModel, FluxModelError, build_flux_model
from .groups import AssumptionViolation, Group, GroupSpec
from .junction import JunctionConfig, JunctionError
from .oracle import BruteOptions
from .planner import PlannerOptions


class ConfigError(ValueError):
    pass


def flux_model_from_expr(expr, rho_jam):
    """Build a flux model from a velocity expression in ``rho``."""
    try:
        v = Function(expr, "rho")
    except ExprError as exc:
        raise ConfigError(f"velocity {expr!r}: {exc}") from exc
    affine = None
    if not variables_of(v.dexpr):
        a = float(v(0.0))
        b = -float(v.d(0.0))
        affine = (a, b)

    def vel(r):
        return np.asarray(v(np.asarray(r, dtype=float)), dtype=float) * np.ones_like(np.asarray(r, dtype=float))

    def dvel(r):
        return np.asarray(v.d(np.asarray(r, dtype=float)), dtype=float) * np.ones_like(np.asarray(r, dtype=float))
    try:
        return build_flux_model(vel, float(rho_jam), dv=dvel, affine=affine)
    except FluxModelError as exc:
        raise ConfigError(f"velocity {expr!r}: {exc}") from exc


@dataclass
class CheckOptions:
    rtol: float = 1e-3
    atol: float = 1e-3
    support_samples: int = 400
    off_samples: int = 500
    shock_points: int = 1000
    mass_rtol: float = 1e-4
    sui_tol: float = 1e-6


@dataclass
class OracleOptions:
    dt: float = 1e-3
    window: Optional[Tuple[float, float]] = None
    cost_rtol: float = 0.01
    brute: BruteOptions = field(default_factory=BruteOptions)


@dataclass
class ProblemConfig:
    velocity: str
    rho_jam: float
    length: float
    window: Tuple[float, float]
    departure_cost: str
    groups: List[dict]
    solver: PlannerOptions = field(default_factory=PlannerOptions)
    check: CheckOptions = field(default_factory=CheckOptions)
    oracle: OracleOptions = field(default_factory=OracleOptions)
    raw: dict = field(default_factory=dict, repr=False)

    def model(self) -> FluxModel:
        return flux_model_from_expr(self.velocity, self.rho_jam)

    def spec(self) -> GroupSpec:
        try:
            phi = Function(self.departure_cost, "t")
            groups = [Group(g["name"], float(g["size"]), Function(g["arrival_cost"], "t"))
                      for g in self.groups]
        except ExprError as exc:
            raise ConfigError(str(exc)) from exc
        spec = GroupSpec(phi, groups)
        try:
            spec.validate(self.window)
        except AssumptionViolation as exc:
            raise ConfigError(str(exc)) from exc
        return spec


def _dataclass_from(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = dict(data)
    if "window" in kwargs and kwargs["window"] is not None:
        kwargs["window"] = tuple(float(x) for x in kwargs["window"])
    return cls(**kwargs)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


_PROBLEM_KEYS = {"road", "window", "departure_cost", "groups", "solver", "check", "oracle"}


def parse_problem(data) -> ProblemConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _PROBLEM_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        road = data["road"]
        velocity, rho_jam, length = road["velocity"], float(road["rho_jam"]), float(road["length"])
        window = tuple(float(x) for x in data["window"])
        phi_src = data["departure_cost"]
        groups = data["groups"]
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if len(window) != 2 or not window[0] < window[1]:
        raise ConfigError("window must be [t_lo, t_hi] with t_lo < t_hi")
    if length <= 0.0:
        raise ConfigError("road length must be positive")
    if not isinstance(groups, list) or not groups:
        raise ConfigError("at least one group is required")
    shared = Function(phi_src, "t") if isinstance(phi_src, str) else None
    if shared is None:
        raise ConfigError("departure_cost must be an expression string")
    names = set()
    for k, g in enumerate(groups):
        for key in ("size", "arrival_cost"):
            if key not in g:
                raise ConfigError(f"group {k} lacks {key!r}")
        g.setdefault("name", f"g{k + 1}")
        if g["name"] in names:
            raise ConfigError(f"duplicate group name {g['name']!r}")
        names.add(g["name"])
        if "departure_cost" in g and Function(g["departure_cost"], "t") != shared:
            raise ConfigError(f"group {g['name']!r} has its own departure cost; all groups must "
                              "share one departure cost")
    solver = _dataclass_from(PlannerOptions, data.get("solver"), "solver")
    if "window" not in (data.get("solver") or {}):
        solver.window = window
    check = _dataclass_from(CheckOptions, data.get("check"), "check")
    oracle_raw = dict(data.get("oracle") or {})
    brute = _dataclass_from(BruteOptions, oracle_raw.pop("brute", None), "oracle.brute")
    oracle = _dataclass_from(OracleOptions, oracle_raw, "oracle")
    oracle.brute = brute
    cfg = ProblemConfig(velocity, rho_jam, length, window, phi_src, groups, solver, check, oracle, raw=data)
    cfg.model()
    cfg.spec()
    return cfg


def load_problem(path) -> ProblemConfig:
    return parse_problem(_load_json(path))


@dataclass
class JunctionSetup:
    model: str
    config: JunctionConfig
    rho_in: List[float]
    rho_out: List[float]
    dt: Optional[float] = None
    t_end: Optional[float] = None
    record_every: int = 1


def load_junction(path) -> JunctionSetup:
    data = _load_json(path)
    try:
        kind = data["model"]
        inc, out = data["incoming"], data["outgoing"]
        pri, turn = data["priorities"], data["turning"]
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from exc
    if kind not in ("lp", "priority", "stopsign", "buffer"):
        raise ConfigError(f"unknown junction model {kind!r}")

    def road(r):
        return flux_model_from_expr(r["velocity"], r["rho_jam"]), float(r["density"])
    try:
        ins = [road(r) for r in inc]
        outs = [road(r) for r in out]
    except KeyError as exc:
        raise ConfigError(f"road lacks {exc}") from exc
    buf = data.get("buffer") or {}
    M = buf.get("capacity")
    if kind == "buffer" and M is None:
        raise ConfigError("buffer model needs buffer.capacity")
    try:
        cfg = JunctionConfig([m for m, _ in ins], [m for m, _ in outs], pri, turn,
                             None if M is None else float(M))
    except JunctionError as exc:
        raise ConfigError(str(exc)) from exc
    return JunctionSetup(kind, cfg, [r for _, r in ins], [r for _, r in outs],
                         buf.get("dt"), buf.get("t_end"), int(buf.get("record_every", 1)))
