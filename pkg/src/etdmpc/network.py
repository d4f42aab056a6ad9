"""Lock-step many-to-all rounds: the shared plan buffer and its updates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .dynamics import PlannedTrajectory, TimingConfig
from .trigger import TriggerDecision


class ProtocolViolation(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SwarmBuffer:
    """Latest plan of every vehicle, as known identically by all participants."""

    plans: tuple[PlannedTrajectory, ...]
    last_replan_round: tuple[int, ...]
    current_round: int

    def __post_init__(self):
        object.__setattr__(self, "plans", tuple(self.plans))
        object.__setattr__(self, "last_replan_round", tuple(int(r) for r in self.last_replan_round))
        if len(self.plans) != len(self.last_replan_round):
            raise ValueError("one replan round per plan is required")
        for i, (plan, last) in enumerate(zip(self.plans, self.last_replan_round)):
            if plan.planned_round != self.current_round:
                raise ValueError(f"plan {i} belongs to round {plan.planned_round}, buffer is at {self.current_round}")
            if last > self.current_round:
                raise ValueError(f"vehicle {i} replanned in the future")

    @property
    def n_vehicles(self) -> int:
        return len(self.plans)

    def digest(self) -> str:
        """Content hash, used to show that checks leave history untouched."""
        import hashlib

        h = hashlib.sha256()
        h.update(repr((self.current_round, self.last_replan_round)).encode())
        for p in self.plans:
            h.update(p.inputs.tobytes())
            h.update(p.states.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class RoundTimeline:
    """Absolute time windows of round ``k``."""

    k: int
    timing: TimingConfig

    @property
    def comm_window(self) -> tuple[Fraction, Fraction]:
        start = self.k * self.timing.T
        return start, start + self.timing.T_com

    @property
    def compute_window(self) -> tuple[Fraction, Fraction]:
        start = self.k * self.timing.T + self.timing.T_com
        return start, (self.k + 1) * self.timing.T

    @property
    def activation_time(self) -> Fraction:
        return (self.k + 1) * self.timing.T

    @property
    def control_window(self) -> tuple[Fraction, Fraction]:
        """Interval on which a plan made in round ``k`` drives the vehicle."""
        return (self.k + 1) * self.timing.T, (self.k + 2) * self.timing.T


def shift_plan(plan: PlannedTrajectory) -> PlannedTrajectory:
    """Reuse ``plan`` one round later: pure reindexing plus terminal hold."""
    timing = plan.timing
    spr = timing.steps_per_round
    per_round = timing.h_s // timing.H
    states = np.concatenate([plan.states[spr:], np.repeat(plan.states[-1:], spr, axis=0)])
    inputs = np.concatenate([plan.inputs[per_round:], np.zeros((per_round, plan.inputs.shape[1]))])
    return PlannedTrajectory(plan.planned_round + 1, inputs, states, timing)


FALLBACK = None


def commit_round(
    buffer: SwarmBuffer,
    decision: TriggerDecision,
    new_plans: Mapping[int, PlannedTrajectory | None],
) -> SwarmBuffer:
    """Buffer after round ``k = buffer.current_round + 1``.

    ``new_plans`` maps every assigned vehicle to its new plan, or to
    ``FALLBACK`` when its solve failed; every other vehicle reuses its
    shifted previous plan.
    """
    k = buffer.current_round + 1
    assigned = set(decision.vehicles)
    extra = set(new_plans) - assigned
    if extra:
        raise ProtocolViolation(f"plans sent for unassigned vehicles {sorted(extra)}")
    missing = assigned - set(new_plans)
    if missing:
        raise ProtocolViolation(f"no result for assigned vehicles {sorted(missing)}")
    plans, last = [], []
    for i, prev in enumerate(buffer.plans):
        new = new_plans.get(i, FALLBACK)
        if new is FALLBACK:
            plans.append(shift_plan(prev))
            last.append(buffer.last_replan_round[i])
        else:
            if new.planned_round != k:
                raise ProtocolViolation(f"plan for vehicle {i} is from round {new.planned_round}, expected {k}")
            plans.append(new)
            last.append(k)
    return SwarmBuffer(tuple(plans), tuple(last), k)


@dataclass
class RoundRecord:
    """One line of the round log."""

    k: int
    assignment: list[tuple[int, int]]
    replanned: list[bool]
    status: list[str]
    # inputs of successfully replanned vehicles, enough to replay the round
    inputs: dict[int, list[list[float]]] = field(default_factory=dict)
    # largest constraint violation of the shifted plan on each assembled QP
    shift_violation: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "type": "round",
            "k": self.k,
            "assignment": [list(a) for a in self.assignment],
            "replanned": [int(r) for r in self.replanned],
            "status": self.status,
            "inputs": {str(i): u for i, u in sorted(self.inputs.items())},
            "shift_violation": {str(i): v for i, v in sorted(self.shift_violation.items())},
        }, separators=(",", ":"))

    @classmethod
    def from_dict(cls, rec: dict) -> "RoundRecord":
        return cls(
            k=int(rec["k"]),
            assignment=[(int(q), int(i)) for q, i in rec["assignment"]],
            replanned=[bool(r) for r in rec["replanned"]],
            status=list(rec["status"]),
            inputs={int(i): u for i, u in rec.get("inputs", {}).items()},
            shift_violation={int(i): float(v) for i, v in rec.get("shift_violation", {}).items()},
        )
