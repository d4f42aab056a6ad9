"""Event-triggered distributed MPC for UAV swarms with limited bandwidth."""

from .constraints import ScaledGeometry, SeparationViolation, Weights, assemble_qp
from .dynamics import LinearModel, PlannedTrajectory, TimingConfig, discretize, evaluate_plan
from .network import SwarmBuffer, commit_round, shift_plan
from .qp import QpProblem, QpSolution, Status, solve
from .sim import Scenario, generate_scenario, run
from .trigger import PriorityParams, priorities, select_pbt, select_round_robin
from .verify import check_lemma1, check_theorem1, check_theorem2, delta_p_max

__all__ = [
    "LinearModel", "TimingConfig", "PlannedTrajectory", "discretize", "evaluate_plan",
    "ScaledGeometry", "Weights", "SeparationViolation", "assemble_qp",
    "QpProblem", "QpSolution", "Status", "solve",
    "PriorityParams", "priorities", "select_pbt", "select_round_robin",
    "SwarmBuffer", "commit_round", "shift_plan",
    "Scenario", "generate_scenario", "run",
    "check_lemma1", "check_theorem1", "check_theorem2", "delta_p_max",
]
