"""Which vehicles get replanned this round.

Vehicles and computation units are indexed from 0. Every function here is a
pure function of a buffer snapshot, so all units reach the same decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PriorityParams:
    # tuned against round-robin on N=15, M=10 (scripts/sweep_priority_weights.py)
    alpha1: float = 2.0  # distance to target, 1/m
    alpha2: float = 10.0  # time since last replan, 1/s
    alpha3: float = 0.2  # blocking neighbors in the cone towards the target
    beta: float = math.pi / 4

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("priority weights must be nonnegative")
        if not 0 < self.beta < math.pi:
            raise ValueError("beta must lie in (0, pi)")


@dataclass(frozen=True)
class TriggerDecision:
    """``assignment`` holds ``(cu, uav)`` pairs sorted by computation unit."""

    assignment: tuple[tuple[int, int], ...]
    n_units: int
    n_vehicles: int

    def __post_init__(self):
        cus = [q for q, _ in self.assignment]
        uavs = [i for _, i in self.assignment]
        if len(set(cus)) != len(cus) or len(set(uavs)) != len(uavs):
            raise ValueError("each unit and each vehicle may appear at most once")
        if any(not 0 <= q < self.n_units for q in cus) or any(not 0 <= i < self.n_vehicles for i in uavs):
            raise ValueError("assignment index out of range")

    @property
    def vehicles(self) -> tuple[int, ...]:
        return tuple(i for _, i in self.assignment)

    @property
    def gamma(self) -> np.ndarray:
        g = np.zeros((self.n_units, self.n_vehicles), dtype=int)
        for q, i in self.assignment:
            g[q, i] = 1
        return g


def _cos(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    den = na * nb
    out = np.zeros_like(den)
    np.divide(np.einsum("...d,...d->...", a, b), den, out=out, where=den > 0)
    return out


def priorities(buffer, targets, params: PriorityParams) -> np.ndarray:
    """Priority of every vehicle for round ``buffer.current_round + 1``.

    Positions are those of the round's previous plans at the start of the
    next executed segment (``2T`` after the previous round start).
    """
    plans = buffer.plans
    timing = plans[0].timing
    k = buffer.current_round + 1
    d = np.asarray(targets).shape[1]
    pos = np.stack([p.state_at_step(timing.steps_per_round)[:d] for p in plans])
    d_target = np.asarray(targets, dtype=float) - pos
    dist_t = np.linalg.norm(d_target, axis=1)
    d_ij = pos[None, :, :] - pos[:, None, :]  # [i, j] = p_j - p_i
    dist_ij = np.linalg.norm(d_ij, axis=2)
    xi = np.maximum(0.0, dist_t[:, None] - dist_ij)
    cos = _cos(np.broadcast_to(d_target[:, None, :], d_ij.shape), d_ij)
    terms = xi * cos
    np.fill_diagonal(terms, 0.0)
    # fixed left-to-right order over neighbors so every unit sums identically
    blocked = np.array([math.fsum(row) for row in terms])
    waited = (k - np.asarray(buffer.last_replan_round, dtype=float)) * float(timing.T)
    return (params.alpha1 * dist_t + params.alpha2 * waited
            - params.alpha3 * np.maximum(math.cos(params.beta), blocked))


def priority(uav_id: int, buffer, targets, params: PriorityParams) -> float:
    return float(priorities(buffer, targets, params)[uav_id])


def select_pbt(prio, n_units: int) -> TriggerDecision:
    """Unit ``q`` replans the vehicle with the (q+1)-th highest priority."""
    if n_units < 1:
        raise ValueError("at least one computation unit is required")
    prio = np.asarray(prio, dtype=float)
    order = sorted(range(prio.size), key=lambda i: (-prio[i], i))
    picks = order[:min(n_units, prio.size)]
    return TriggerDecision(tuple(enumerate(picks)), n_units, prio.size)


def select_round_robin(k: int, n_vehicles: int, n_units: int) -> TriggerDecision:
    """Unit ``q`` replans vehicle ``(k*M + q) mod N``."""
    if n_units < 1:
        raise ValueError("at least one computation unit is required")
    busy = min(n_units, n_vehicles)
    return TriggerDecision(
        tuple((q, (k * n_units + q) % n_vehicles) for q in range(busy)), n_units, n_vehicles
    )
