"""Scenario generation, the round loop and experiment metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import Prediction, ScaledGeometry, SeparationViolation, Weights, assemble_qp
from .dynamics import LinearModel, PlannedTrajectory, TimingConfig, hover_plan, make_plan
from .network import RoundRecord, SwarmBuffer, commit_round, shift_plan
from .qp import DEFAULT_SETTINGS, SolverSettings, check_feasible, solve
from .trigger import PriorityParams, TriggerDecision, priorities, select_pbt, select_round_robin
from . import verify

log = logging.getLogger(__name__)

ARRIVAL_TOL = 0.05
MAX_PACKING_ATTEMPTS = 100_000


class PackingFailure(RuntimeError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message: str, records: list[RoundRecord]):
        super().__init__(message)
        self.records = records


@dataclass(frozen=True, eq=False)
class Scenario:
    N: int
    M: int
    initial_states: np.ndarray  # (N, n)
    targets: np.ndarray  # (N, d)
    space_lower: np.ndarray
    space_upper: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "N": self.N, "M": self.M, "seed": self.seed,
            "initial_states": self.initial_states.tolist(),
            "targets": self.targets.tolist(),
            "space_lower": self.space_lower.tolist(),
            "space_upper": self.space_upper.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(
            int(data["N"]), int(data["M"]),
            np.asarray(data["initial_states"], dtype=float).reshape(int(data["N"]), -1),
            np.asarray(data["targets"], dtype=float).reshape(int(data["N"]), -1),
            np.asarray(data["space_lower"], dtype=float),
            np.asarray(data["space_upper"], dtype=float),
            int(data.get("seed", 0)),
        )

    def validate(self, geom: ScaledGeometry, tol: float = 0.0) -> None:
        """Raise ``ValueError`` unless positions and targets are in the box and separated."""
        d = self.targets.shape[1]
        for what, pts in (("initial positions", self.initial_states[:, :d]), ("targets", self.targets)):
            if np.any(pts < self.space_lower) or np.any(pts > self.space_upper):
                raise ValueError(f"{what} leave the space box")
            for i in range(self.N):
                for j in range(i + 1, self.N):
                    if geom.scaled_distance(pts[i], pts[j]) < geom.r_hat_min - tol:
                        raise ValueError(f"{what} {i} and {j} closer than r_hat_min")
        if np.any(self.initial_states[:, d:] != 0):
            raise ValueError("initial velocities and auxiliary states must be zero")


def _pack(rng: np.random.Generator, N: int, lo, hi, geom: ScaledGeometry, budget: list[int]) -> np.ndarray:
    pts = np.empty((N, lo.size))
    for i in range(N):
        while True:
            if budget[0] <= 0:
                raise PackingFailure(f"could not place {N} vehicles within {MAX_PACKING_ATTEMPTS} attempts")
            budget[0] -= 1
            cand = rng.uniform(lo, hi)
            if i == 0 or np.min(geom.scaled_distance(pts[:i], cand)) >= geom.r_hat_min:
                pts[i] = cand
                break
    return pts


def generate_scenario(N: int, M: int, space_lower, space_upper, geom: ScaledGeometry, seed: int, n_states: int | None = None) -> Scenario:
    """Uniform random starts and targets, rejection-sampled for separation."""
    lo = np.asarray(space_lower, dtype=float)
    hi = np.asarray(space_upper, dtype=float)
    if np.any(lo >= hi):
        raise ValueError("space box must have positive extent")
    d = lo.size
    n = 3 * d if n_states is None else n_states
    rng = np.random.default_rng(seed)
    budget = [MAX_PACKING_ATTEMPTS]
    starts = _pack(rng, N, lo, hi, geom, budget)
    targets = _pack(rng, N, lo, hi, geom, budget)
    x0 = np.zeros((N, n))
    x0[:, :d] = starts
    return Scenario(N, M, x0, targets, lo, hi, seed)


def initial_plans(scenario: Scenario, model: LinearModel, timing: TimingConfig) -> SwarmBuffer:
    """Round -1 buffer: everyone hovers at their start."""
    d = model.d
    plans = tuple(hover_plan(model, timing, -1, scenario.initial_states[i, :d]) for i in range(scenario.N))
    return SwarmBuffer(plans, (-1,) * scenario.N, -1)


@dataclass
class MetricsSeries:
    times: np.ndarray  # seconds, one entry per round boundary
    mean_distance: np.ndarray
    distances: np.ndarray  # (rounds+1, N)
    arrival_round: list[int | None]
    success_rate: float
    replan_counts: np.ndarray
    deadlocked: list[int]
    arrival_tol: float = ARRIVAL_TOL

    @property
    def time_averaged_distance(self) -> float:
        return float(np.mean(self.mean_distance))


@dataclass
class History:
    """Everything needed to re-check or replay a run."""

    scenario: Scenario
    model: LinearModel
    timing: TimingConfig
    geom: ScaledGeometry
    weights: Weights
    trigger: str
    buffers: list[SwarmBuffer] = field(default_factory=list)  # buffers[0] is round -1
    records: list[RoundRecord] = field(default_factory=list)

    def positions(self) -> np.ndarray:
        """Positions at the round boundaries ``0, T, 2T, ...`` (rounds+1, N, d)."""
        d = self.model.d
        return np.stack([[p.origin_state[:d] for p in b.plans] for b in self.buffers])

    def states(self) -> np.ndarray:
        return np.stack([[p.origin_state for p in b.plans] for b in self.buffers])


@dataclass
class RunResult:
    history: History
    metrics: MetricsSeries
    separation: verify.SeparationReport
    dense: verify.SeparationReport
    theorem1: verify.Theorem1Report

    @property
    def guarantees_ok(self) -> bool:
        dense_ok = self.dense.ok if self.dense.guarantee_configured else self.dense.proof_inequality_holds is not False
        return self.separation.violations == 0 and self.theorem1.ok and dense_ok


def _trigger_name(trigger) -> str:
    if isinstance(trigger, PriorityParams) or trigger == "pbt":
        return "pbt"
    if trigger == "round_robin":
        return "round_robin"
    raise ValueError(f"unknown trigger {trigger!r}")


def decide(trigger, buffer: SwarmBuffer, targets, n_units: int) -> TriggerDecision:
    if _trigger_name(trigger) == "pbt":
        params = trigger if isinstance(trigger, PriorityParams) else PriorityParams()
        return select_pbt(priorities(buffer, targets, params), n_units)
    return select_round_robin(buffer.current_round + 1, buffer.n_vehicles, n_units)


def run(
    scenario: Scenario,
    model: LinearModel,
    timing: TimingConfig,
    geom: ScaledGeometry,
    weights: Weights,
    trigger="pbt",
    rounds: int = 180,
    *,
    settings: SolverSettings = DEFAULT_SETTINGS,
    substeps: int = 8,
    arrival_tol: float = ARRIVAL_TOL,
    force_failure=None,
) -> RunResult:
    """Simulate ``rounds`` rounds and check the guarantees afterwards.

    ``force_failure(k, uav) -> bool`` lets tests discard chosen solves.
    """
    scenario.validate(geom)
    history = History(scenario, model, timing, geom, weights, _trigger_name(trigger))
    pred = Prediction(model, timing)
    buffer = initial_plans(scenario, model, timing)
    history.buffers.append(buffer)
    N = scenario.N
    for k in range(rounds):
        decision = decide(trigger, buffer, scenario.targets, scenario.M) if scenario.M > 0 else TriggerDecision((), 0, N)
        new_plans: dict[int, PlannedTrajectory | None] = {}
        status = ["not_assigned"] * N
        rec = RoundRecord(k, list(decision.assignment), [False] * N, status)
        for _, i in decision.assignment:
            try:
                prob = assemble_qp(i, buffer, model, timing, geom, weights, scenario.targets[i], pred)
            except SeparationViolation as exc:
                history.records.append(rec)
                raise SimulationError(f"round {k}: {exc}", history.records) from exc
            prev = buffer.plans[i]
            shifted_u = shift_plan(prev).inputs.reshape(-1)
            rec.shift_violation[i] = check_feasible(prob, shifted_u).max_violation
            sol = solve(prob, warm_start=shifted_u, settings=settings)
            status[i] = sol.status.value
            if sol.ok and not (force_failure and force_failure(k, i)):
                origin = prev.state_at_step(timing.steps_per_round)
                new_plans[i] = make_plan(model, timing, k, origin, sol.primal)
                rec.replanned[i] = True
                rec.inputs[i] = new_plans[i].inputs.tolist()
            else:
                if sol.ok:
                    status[i] = "forced_failure"
                new_plans[i] = None
        buffer = commit_round(buffer, decision, new_plans)
        history.buffers.append(buffer)
        history.records.append(rec)
    return _finish(history, substeps, arrival_tol)


def _finish(history: History, substeps: int, arrival_tol: float) -> RunResult:
    metrics = compute_metrics(history, history.scenario.targets, arrival_tol)
    sep = verify.check_lemma1(history.buffers, history.geom)
    dense = verify.check_theorem2(history.buffers, history.model, history.geom, substeps=substeps)
    th1 = verify.check_theorem1(history, reassemble=False)
    return RunResult(history, metrics, sep, dense, th1)


def replay(scenario: Scenario, model, timing, geom, weights, trigger: str, records: list[RoundRecord],
           substeps: int = 8, arrival_tol: float = ARRIVAL_TOL) -> RunResult:
    """Rebuild a run from its round log (no solver calls)."""
    history = History(scenario, model, timing, geom, weights, trigger)
    buffer = initial_plans(scenario, model, timing)
    history.buffers.append(buffer)
    for rec in records:
        if rec.k != buffer.current_round + 1:
            raise ValueError(f"round log out of order at round {rec.k}")
        decision = TriggerDecision(tuple(rec.assignment), max([q for q, _ in rec.assignment], default=-1) + 1, scenario.N)
        new_plans = {}
        for _, i in rec.assignment:
            if rec.replanned[i]:
                origin = buffer.plans[i].state_at_step(timing.steps_per_round)
                new_plans[i] = make_plan(model, timing, rec.k, origin, np.asarray(rec.inputs[i], dtype=float))
            else:
                new_plans[i] = None
        buffer = commit_round(buffer, decision, new_plans)
        history.buffers.append(buffer)
        history.records.append(rec)
    return _finish(history, substeps, arrival_tol)


def compute_metrics(history: History, targets, arrival_tol: float = ARRIVAL_TOL) -> MetricsSeries:
    """Distance-to-target series at round boundaries plus arrival statistics."""
    if not history.buffers:
        raise ValueError("empty history")
    timing = history.timing
    pos = history.positions()
    dist = np.linalg.norm(pos - np.asarray(targets, dtype=float)[None], axis=2)
    times = np.array([float(r * timing.T) for r in range(len(dist))])
    N = dist.shape[1]
    arrival: list[int | None] = []
    for i in range(N):
        arrived = None
        for r in range(len(dist)):
            near = dist[r, i] <= arrival_tol
            if near and arrived is None and np.all(dist[r:, i] <= 2 * arrival_tol):
                arrived = r
                break
        arrival.append(arrived)
    success = sum(a is not None for a in arrival) / N if N else 1.0
    counts = np.zeros(N, dtype=int)
    for rec in history.records:
        for i, flag in enumerate(rec.replanned):
            counts[i] += int(flag)
    window = 3 * timing.H
    deadlocked = []
    if len(dist) > window:
        for i in range(N):
            if arrival[i] is None and dist[-1 - window, i] - dist[-1, i] < arrival_tol:
                deadlocked.append(i)
    return MetricsSeries(times, dist.mean(axis=1), dist, arrival, success, counts, deadlocked, arrival_tol)


def write_round_log(path, result: RunResult, extra_header: dict | None = None) -> None:
    """Line-delimited log: one header record, then one record per round."""
    h = result.history
    header = {"type": "header", "trigger": h.trigger, "scenario": h.scenario.to_dict()}
    if extra_header:
        header.update(extra_header)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for rec in h.records:
            fh.write(rec.to_json() + "\n")


def read_round_log(path) -> tuple[dict, list[RoundRecord]]:
    header = None
    records = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("type") == "header":
                header = rec
            elif rec.get("type") == "round":
                records.append(RoundRecord.from_dict(rec))
            else:
                raise ValueError(f"{path}:{n}: unknown record type {rec.get('type')!r}")
    if header is None:
        raise ValueError(f"{path}: missing header record")
    return header, records
