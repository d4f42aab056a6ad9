"""Run configuration: one YAML file with a section per module."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from .constraints import ScaledGeometry, Weights
from .dynamics import LinearModel, TimingConfig, as_time
from .qp import SolverSettings
from .trigger import PriorityParams


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


DEFAULTS: dict = {
    "N": 15,
    "M": 10,
    "rounds": 180,
    "ensemble": 1,
    "seed_base": 0,
    "output_dir": "out",
    "workers": 1,
    "scenario_file": None,
    "dynamics": {"v_max": 1.0, "a_max": 2.0, "u_max": 5.0},
    "timing": {"T": None, "T_calc": "7/30", "T_com": "1/10", "H": 15,
               "Ts": None, "To": None, "Tb": None, "Tc": None},
    "constraints": {"theta": [1.0, 1.0, 2.0], "r_min": 0.2, "r_hat_min": 0.7,
                    "space_lower": [-2.5, -2.5, 0.0], "space_upper": [2.5, 2.5, 5.0]},
    "weights": {"q_pos": 1.0, "q_vel": 0.05, "q_aux": 0.01, "r": 0.01},
    "trigger": {"kind": "pbt", **asdict(PriorityParams())},
    "qp": {"feas_tol": 1e-6, "kkt_tol": 1e-6, "max_iter": 4000},
    "verify": {"substeps": 8},
    "sim": {"arrival_tol": 0.05},
}

TRIGGER_KINDS = ("pbt", "round_robin")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown key '{where}'", where)
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be a section", where)
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass
class RunConfig:
    raw: dict
    model: LinearModel
    timing: TimingConfig
    geom: ScaledGeometry
    weights: Weights
    priority: PriorityParams
    solver: SolverSettings
    trigger_kinds: list[str]
    M_values: list[int]
    N: int
    rounds: int
    ensemble: int
    seed_base: int
    output_dir: Path
    workers: int
    substeps: int
    arrival_tol: float
    space_lower: np.ndarray
    space_upper: np.ndarray
    scenario_file: Path | None = None
    source: Path | None = None

    def trigger_for(self, kind: str):
        return self.priority if kind == "pbt" else "round_robin"

    def variants(self) -> list[tuple[str, int]]:
        return [(kind, M) for M in self.M_values for kind in self.trigger_kinds]

    def effective_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def _field(raw: dict, dotted: str):
    node = raw
    for part in dotted.split("."):
        node = node[part]
    return node


def build_config(data: dict | None, source: Path | None = None) -> RunConfig:
    """Validate ``data`` against the schema and construct every module config."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    raw = _merge(DEFAULTS, data)
    current = ""

    def get(dotted):
        nonlocal current
        current = dotted
        return _field(raw, dotted)

    try:
        tm = raw["timing"]
        current = "timing"
        timing = TimingConfig(
            T_calc=as_time(tm["T_calc"]), T_com=as_time(tm["T_com"]), H=int(tm["H"]),
            T=None if tm["T"] is None else as_time(tm["T"]),
            Ts=None if tm["Ts"] is None else as_time(tm["Ts"]),
            To=None if tm["To"] is None else as_time(tm["To"]),
            Tb=None if tm["Tb"] is None else as_time(tm["Tb"]),
            Tc=None if tm["Tc"] is None else as_time(tm["Tc"]),
        )
        lo = np.asarray(get("constraints.space_lower"), dtype=float)
        hi = np.asarray(get("constraints.space_upper"), dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo >= hi):
            raise ValueError("space box must be 3-D with lower < upper")
        dyn = raw["dynamics"]
        current = "dynamics"
        model = LinearModel.triple_integrator(float(dyn["v_max"]), float(dyn["a_max"]), float(dyn["u_max"]), lo, hi)
        current = "constraints"
        geom = ScaledGeometry(np.asarray(get("constraints.theta"), dtype=float),
                              float(get("constraints.r_min")), float(get("constraints.r_hat_min")))
        wt = raw["weights"]
        current = "weights"
        weights = Weights.default(model, float(wt["q_pos"]), float(wt["q_vel"]), float(wt["q_aux"]), float(wt["r"]))
        tr = raw["trigger"]
        current = "trigger"
        priority = PriorityParams(float(tr["alpha1"]), float(tr["alpha2"]), float(tr["alpha3"]), float(tr["beta"]))
        kinds = _as_list(tr["kind"])
        for kind in kinds:
            if kind not in TRIGGER_KINDS:
                raise ValueError(f"trigger kind must be one of {TRIGGER_KINDS}, got {kind!r}")
        current = "qp"
        q = raw["qp"]
        solver = SolverSettings(feas_tol=float(q["feas_tol"]), kkt_tol=float(q["kkt_tol"]), max_iter=int(q["max_iter"]))
        current = "N"
        N = int(raw["N"])
        if N < 1:
            raise ValueError("N must be >= 1")
        current = "M"
        Ms = [int(m) for m in _as_list(raw["M"])]
        if any(m < 1 for m in Ms):
            raise ValueError("M must be >= 1")
        for key in ("rounds", "ensemble", "workers"):
            current = key
            if int(raw[key]) < (0 if key == "rounds" else 1):
                raise ValueError(f"{key} out of range")
        current = "verify.substeps"
        substeps = int(raw["verify"]["substeps"])
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        current = "sim.arrival_tol"
        arrival_tol = float(raw["sim"]["arrival_tol"])
        if arrival_tol <= 0:
            raise ValueError("arrival_tol must be positive")
    except ConfigError:
        raise
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(f"invalid '{current}': {exc}", current) from exc

    base = source.parent if source is not None else Path.cwd()
    scen = raw["scenario_file"]
    return RunConfig(
        raw=_plain(raw), model=model, timing=timing, geom=geom, weights=weights, priority=priority,
        solver=solver, trigger_kinds=kinds, M_values=Ms, N=N, rounds=int(raw["rounds"]),
        ensemble=int(raw["ensemble"]), seed_base=int(raw["seed_base"]),
        output_dir=Path(raw["output_dir"]), workers=int(raw["workers"]),
        substeps=substeps, arrival_tol=arrival_tol, space_lower=lo, space_upper=hi,
        scenario_file=None if scen is None else (base / scen), source=source,
    )


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: {getattr(exc, 'problem', exc)}") from exc
    try:
        return build_config(data, path)
    except ConfigError as exc:
        line = _line_of(text, exc.field) if exc.field else None
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {exc}", exc.field) from exc


def _line_of(text: str, dotted: str) -> int | None:
    """1-based line of the deepest existing key along ``dotted``."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for part in dotted.split("."):
        if not isinstance(node, yaml.MappingNode):
            break
        for key, val in node.value:
            if key.value == part:
                line = key.start_mark.line + 1
                node = val
                break
        else:
            break
    return line
